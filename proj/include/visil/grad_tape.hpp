#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "visil/kernels.hpp"
#include "visil/tensor.hpp"

namespace visil {

/// Handle to a value recorded on a GradTape.
struct Var {
    std::uint64_t tape = 0;
    Index node = -1;
};

/// Single-shot reverse-mode tape for the fixed similarity graph.
///
/// Values are recorded in execution order; `backward` walks the records in
/// reverse and accumulates adjoints into every named parameter. A tape is
/// confined to the thread that created it and may be differentiated once.
/// With recording disabled the tape only evaluates values, which is what
/// inference uses.
template <typename Scalar>
class GradTape {
public:
    using TensorT = Tensor<Scalar>;
    /// Receives the adjoint of the node's output and pushes adjoints to the
    /// node's inputs through `accumulate`.
    using BackwardFn = std::function<void(const TensorT& out_grad, GradTape& tape)>;

    explicit GradTape(bool recording = true);
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    bool recording() const { return recording_; }

    Var constant(TensorT value);
    Var parameter(std::string name, TensorT value);

    /// Records an op output. `backward` is dropped when recording is off or
    /// when no parent needs a gradient.
    Var record(TensorT value, std::vector<Var> parents, BackwardFn backward);

    const TensorT& value(Var v) const;
    bool requires_grad(Var v) const;
    /// Adds `g` into the adjoint of `v`; ignored for constants.
    void accumulate(Var v, const TensorT& g);
    /// Zero-initialized adjoint buffer of `v` for in-place accumulation.
    TensorT& grad_buffer(Var v);

    std::size_t size() const { return nodes_.size(); }

    /// Adjoints of the scalar `output` with respect to every parameter.
    std::map<std::string, TensorT> backward(Var output);

    /// Node indices visited by the last backward pass, in visit order.
    const std::vector<Index>& visit_order() const { return visits_; }

private:
    struct Node {
        TensorT value;
        std::optional<TensorT> grad;
        std::vector<Var> parents;
        BackwardFn backward;
        bool requires_grad = false;
        std::string parameter_name;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::uint64_t id_;
    bool recording_;
    bool consumed_ = false;
    std::vector<Node> nodes_;
    std::vector<Index> visits_;
};

/// Differentiable ops over GradTape. Each mirrors a kernel in kernels.hpp.
namespace ad {

template <typename S> Var add(GradTape<S>& t, Var a, Var b);
template <typename S> Var sub(GradTape<S>& t, Var a, Var b);
template <typename S> Var mul(GradTape<S>& t, Var a, Var b);
template <typename S> Var scale(GradTape<S>& t, Var a, double factor);
template <typename S> Var sum(GradTape<S>& t, Var a);
template <typename S> Var mean(GradTape<S>& t, Var a);
template <typename S> Var reshape(GradTape<S>& t, Var a, const Shape& shape);
template <typename S> Var relu(GradTape<S>& t, Var a);
template <typename S> Var hard_tanh(GradTape<S>& t, Var a);

/// conv2d + per-channel bias.
template <typename S>
Var conv2d(GradTape<S>& t, Var input, Var kernel, Var bias, Index stride = 1, Padding padding = Padding::same);
template <typename S> Var max_pool2d(GradTape<S>& t, Var input, Index window = 2, Index stride = 2);

/// Grows an H x W matrix to at least min_rows x min_cols by repeating its
/// last row / column.
template <typename S> Var pad_replicate(GradTape<S>& t, Var matrix, Index min_rows, Index min_cols);

/// Mean over rows of the row maximum of an X x Y matrix (first index wins ties).
template <typename S> Var row_max_mean(GradTape<S>& t, Var matrix);
/// Mean over columns of the column maximum.
template <typename S> Var col_max_mean(GradTape<S>& t, Var matrix);

/// Sum over entries of max(0, v - 1) + max(0, -1 - v).
template <typename S> Var saturation_penalty(GradTape<S>& t, Var a);

}  // namespace ad

}  // namespace visil
