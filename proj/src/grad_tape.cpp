#include "visil/grad_tape.hpp"

#include <atomic>

namespace visil {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

template <typename Scalar>
GradTape<Scalar>::GradTape(bool recording) : id_(next_tape_id.fetch_add(1)), recording_(recording) {}

template <typename Scalar>
typename GradTape<Scalar>::Node& GradTape<Scalar>::node(Var v) {
    if (v.tape != id_ || v.node < 0 || v.node >= static_cast<Index>(nodes_.size()))
        throw InvalidArgument("variable is not recorded on this tape");
    return nodes_[static_cast<std::size_t>(v.node)];
}

template <typename Scalar>
const typename GradTape<Scalar>::Node& GradTape<Scalar>::node(Var v) const {
    return const_cast<GradTape*>(this)->node(v);
}

template <typename Scalar>
Var GradTape<Scalar>::constant(TensorT value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, {}, false, {}});
    return Var{id_, static_cast<Index>(nodes_.size()) - 1};
}

template <typename Scalar>
Var GradTape<Scalar>::parameter(std::string name, TensorT value) {
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, {}, recording_, std::move(name)});
    return Var{id_, static_cast<Index>(nodes_.size()) - 1};
}

template <typename Scalar>
Var GradTape<Scalar>::record(TensorT value, std::vector<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || node(p).requires_grad;
    Node n{std::move(value), std::nullopt, {}, {}, false, {}};
    if (recording_ && needs) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{id_, static_cast<Index>(nodes_.size()) - 1};
}

template <typename Scalar>
const Tensor<Scalar>& GradTape<Scalar>::value(Var v) const {
    return node(v).value;
}

template <typename Scalar>
bool GradTape<Scalar>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename Scalar>
Tensor<Scalar>& GradTape<Scalar>::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
}

template <typename Scalar>
void GradTape<Scalar>::accumulate(Var v, const TensorT& g) {
    if (!node(v).requires_grad) return;
    TensorT& buf = grad_buffer(v);
    require_same_shape(buf.shape(), g.shape(), "adjoint accumulation");
    buf.flat() += g.flat();
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> GradTape<Scalar>::backward(Var output) {
    if (output.tape != id_ || output.node < 0 || output.node >= static_cast<Index>(nodes_.size()))
        throw InvalidArgument("backward: output is not recorded on this tape");
    if (!recording_) throw InvalidArgument("backward: tape was created without recording");
    if (consumed_) throw InvalidArgument("backward: tape has already been differentiated");
    if (node(output).value.size() != 1) throw ShapeError("backward: output must be a scalar");
    consumed_ = true;
    visits_.clear();

    std::map<std::string, TensorT> adjoints;
    if (node(output).requires_grad) {
        grad_buffer(output)[0] = Scalar(1);
        for (Index i = output.node; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.grad || !n.backward) continue;
            visits_.push_back(i);
            n.backward(*n.grad, *this);
        }
    }
    for (auto& n : nodes_) {
        if (n.parameter_name.empty()) continue;
        adjoints.emplace(n.parameter_name, n.grad ? std::move(*n.grad) : TensorT(n.value.shape()));
    }
    return adjoints;
}

template class GradTape<float>;
template class GradTape<double>;

namespace ad {

template <typename S>
Var add(GradTape<S>& t, Var a, Var b) {
    require_same_shape(t.value(a).shape(), t.value(b).shape(), "add");
    Tensor<S> out = t.value(a);
    out.flat() += t.value(b).flat();
    return t.record(std::move(out), {a, b}, [a, b](const Tensor<S>& g, GradTape<S>& tape) {
        tape.accumulate(a, g);
        tape.accumulate(b, g);
    });
}

template <typename S>
Var sub(GradTape<S>& t, Var a, Var b) {
    require_same_shape(t.value(a).shape(), t.value(b).shape(), "sub");
    Tensor<S> out = t.value(a);
    out.flat() -= t.value(b).flat();
    return t.record(std::move(out), {a, b}, [a, b](const Tensor<S>& g, GradTape<S>& tape) {
        tape.accumulate(a, g);
        if (tape.requires_grad(b)) tape.grad_buffer(b).flat() -= g.flat();
    });
}

template <typename S>
Var mul(GradTape<S>& t, Var a, Var b) {
    require_same_shape(t.value(a).shape(), t.value(b).shape(), "mul");
    Tensor<S> out = t.value(a);
    out.flat().array() *= t.value(b).flat().array();
    return t.record(std::move(out), {a, b}, [a, b](const Tensor<S>& g, GradTape<S>& tape) {
        if (tape.requires_grad(a))
            tape.grad_buffer(a).flat().array() += g.flat().array() * tape.value(b).flat().array();
        if (tape.requires_grad(b))
            tape.grad_buffer(b).flat().array() += g.flat().array() * tape.value(a).flat().array();
    });
}

template <typename S>
Var scale(GradTape<S>& t, Var a, double factor) {
    Tensor<S> out = t.value(a);
    out.flat() *= static_cast<S>(factor);
    return t.record(std::move(out), {a}, [a, factor](const Tensor<S>& g, GradTape<S>& tape) {
        tape.grad_buffer(a).flat() += g.flat() * static_cast<S>(factor);
    });
}

template <typename S>
Var sum(GradTape<S>& t, Var a) {
    double total = 0.0;
    for (S v : t.value(a).values()) total += static_cast<double>(v);
    return t.record(Tensor<S>::scalar(static_cast<S>(total)), {a}, [a](const Tensor<S>& g, GradTape<S>& tape) {
        tape.grad_buffer(a).flat().array() += g[0];
    });
}

template <typename S>
Var mean(GradTape<S>& t, Var a) {
    const Index n = t.value(a).size();
    double total = 0.0;
    for (S v : t.value(a).values()) total += static_cast<double>(v);
    return t.record(Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n))), {a},
                    [a, n](const Tensor<S>& g, GradTape<S>& tape) {
                        tape.grad_buffer(a).flat().array() += static_cast<S>(static_cast<double>(g[0]) / n);
                    });
}

template <typename S>
Var reshape(GradTape<S>& t, Var a, const Shape& shape) {
    const Shape original = t.value(a).shape();
    return t.record(t.value(a).reshaped(shape), {a}, [a, original](const Tensor<S>& g, GradTape<S>& tape) {
        tape.accumulate(a, g.reshaped(original));
    });
}

template <typename S>
Var relu(GradTape<S>& t, Var a) {
    return t.record(visil::relu(t.value(a)), {a}, [a](const Tensor<S>& g, GradTape<S>& tape) {
        const Tensor<S>& x = tape.value(a);
        Tensor<S>& ga = tape.grad_buffer(a);
        for (Index i = 0; i < x.size(); ++i)
            if (x[i] > S(0)) ga[i] += g[i];
    });
}

template <typename S>
Var hard_tanh(GradTape<S>& t, Var a) {
    return t.record(visil::hard_tanh(t.value(a)), {a}, [a](const Tensor<S>& g, GradTape<S>& tape) {
        const Tensor<S>& x = tape.value(a);
        Tensor<S>& ga = tape.grad_buffer(a);
        for (Index i = 0; i < x.size(); ++i)
            if (x[i] > S(-1) && x[i] < S(1)) ga[i] += g[i];
    });
}

template <typename S>
Var conv2d(GradTape<S>& t, Var input, Var kernel, Var bias, Index stride, Padding padding) {
    const auto g = detail::ConvGeometry::make(t.value(input).shape(), t.value(kernel).shape(), stride, padding);
    if (t.value(bias).rank() != 1 || t.value(bias).dim(0) != g.out_channels)
        throw ShapeError("conv2d: bias must have one entry per output channel");
    RowMatrix<double> cols = detail::im2col(t.value(input), g);
    RowMatrix<double> out = cols * t.value(kernel).matrix(g.patch_size()).template cast<double>();
    out.rowwise() += t.value(bias).flat().template cast<double>().transpose();
    Tensor<S> result(Shape{g.out_height, g.out_width, g.out_channels});
    result.matrix(g.out_height * g.out_width) = out.template cast<S>();

    if (!t.recording()) return t.record(std::move(result), {}, {});
    return t.record(std::move(result), {input, kernel, bias},
                    [input, kernel, bias, g, cols = std::move(cols)](const Tensor<S>& grad, GradTape<S>& tape) {
                        const RowMatrix<double> dout =
                            grad.matrix(g.out_height * g.out_width).template cast<double>();
                        if (tape.requires_grad(kernel)) {
                            const RowMatrix<double> dk = cols.transpose() * dout;
                            tape.grad_buffer(kernel).matrix(g.patch_size()) += dk.template cast<S>();
                        }
                        if (tape.requires_grad(bias))
                            tape.grad_buffer(bias).flat() += dout.colwise().sum().transpose().template cast<S>();
                        if (tape.requires_grad(input)) {
                            const RowMatrix<double> dcols =
                                dout * tape.value(kernel).matrix(g.patch_size()).template cast<double>().transpose();
                            detail::col2im(dcols, g, tape.grad_buffer(input));
                        }
                    });
}

template <typename S>
Var max_pool2d(GradTape<S>& t, Var input, Index window, Index stride) {
    std::vector<Index> argmax;
    Tensor<S> out = visil::max_pool2d(t.value(input), window, stride, argmax);
    return t.record(std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor<S>& g, GradTape<S>& tape) {
        Tensor<S>& gi = tape.grad_buffer(input);
        for (std::size_t o = 0; o < argmax.size(); ++o) gi[argmax[o]] += g[static_cast<Index>(o)];
    });
}

template <typename S>
Var pad_replicate(GradTape<S>& t, Var matrix, Index min_rows, Index min_cols) {
    const Tensor<S>& m = t.value(matrix);
    if (m.rank() != 2) throw ShapeError("pad_replicate: expected a matrix");
    const Index rows = m.dim(0), cols = m.dim(1);
    const Index out_rows = std::max(rows, min_rows), out_cols = std::max(cols, min_cols);
    if (out_rows == rows && out_cols == cols) return matrix;
    Tensor<S> out(Shape{out_rows, out_cols});
    for (Index i = 0; i < out_rows; ++i)
        for (Index j = 0; j < out_cols; ++j) out.at(i, j) = m.at(std::min(i, rows - 1), std::min(j, cols - 1));
    return t.record(std::move(out), {matrix}, [matrix, rows, cols, out_rows, out_cols](const Tensor<S>& g, GradTape<S>& tape) {
        Tensor<S>& gm = tape.grad_buffer(matrix);
        for (Index i = 0; i < out_rows; ++i)
            for (Index j = 0; j < out_cols; ++j) gm.at(std::min(i, rows - 1), std::min(j, cols - 1)) += g.at(i, j);
    });
}

namespace {

// Shared body of row/col max-mean; `transpose` reduces columns instead.
template <typename S>
Var axis_max_mean(GradTape<S>& t, Var matrix, bool transpose) {
    const Tensor<S>& m = t.value(matrix);
    if (m.rank() != 2) throw ShapeError("chamfer: expected a matrix");
    const Index rows = m.dim(0), cols = m.dim(1);
    const Index outer = transpose ? cols : rows;
    const Index inner = transpose ? rows : cols;
    std::vector<Index> argmax(static_cast<std::size_t>(outer));
    double total = 0.0;
    for (Index o = 0; o < outer; ++o) {
        Index best = 0;
        S best_value = transpose ? m.at(0, o) : m.at(o, 0);
        for (Index i = 1; i < inner; ++i) {
            const S v = transpose ? m.at(i, o) : m.at(o, i);
            if (v > best_value) {
                best_value = v;
                best = i;
            }
        }
        argmax[static_cast<std::size_t>(o)] = transpose ? best * cols + o : o * cols + best;
        total += static_cast<double>(best_value);
    }
    return t.record(Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(outer))), {matrix},
                    [matrix, outer, argmax = std::move(argmax)](const Tensor<S>& g, GradTape<S>& tape) {
                        Tensor<S>& gm = tape.grad_buffer(matrix);
                        const S share = static_cast<S>(static_cast<double>(g[0]) / static_cast<double>(outer));
                        for (Index at : argmax) gm[at] += share;
                    });
}

}  // namespace

template <typename S>
Var row_max_mean(GradTape<S>& t, Var matrix) {
    return axis_max_mean(t, matrix, false);
}

template <typename S>
Var col_max_mean(GradTape<S>& t, Var matrix) {
    return axis_max_mean(t, matrix, true);
}

template <typename S>
Var saturation_penalty(GradTape<S>& t, Var a) {
    double total = 0.0;
    for (S v : t.value(a).values()) {
        if (v > S(1)) total += static_cast<double>(v) - 1.0;
        if (v < S(-1)) total += -1.0 - static_cast<double>(v);
    }
    return t.record(Tensor<S>::scalar(static_cast<S>(total)), {a}, [a](const Tensor<S>& g, GradTape<S>& tape) {
        const Tensor<S>& x = tape.value(a);
        Tensor<S>& ga = tape.grad_buffer(a);
        for (Index i = 0; i < x.size(); ++i) {
            if (x[i] > S(1)) ga[i] += g[0];
            if (x[i] < S(-1)) ga[i] -= g[0];
        }
    });
}

#define VISIL_INSTANTIATE_AD(T)                                                          \
    template Var add<T>(GradTape<T>&, Var, Var);                                         \
    template Var sub<T>(GradTape<T>&, Var, Var);                                         \
    template Var mul<T>(GradTape<T>&, Var, Var);                                         \
    template Var scale<T>(GradTape<T>&, Var, double);                                    \
    template Var sum<T>(GradTape<T>&, Var);                                              \
    template Var mean<T>(GradTape<T>&, Var);                                             \
    template Var reshape<T>(GradTape<T>&, Var, const Shape&);                            \
    template Var relu<T>(GradTape<T>&, Var);                                             \
    template Var hard_tanh<T>(GradTape<T>&, Var);                                        \
    template Var conv2d<T>(GradTape<T>&, Var, Var, Var, Index, Padding);                 \
    template Var max_pool2d<T>(GradTape<T>&, Var, Index, Index);                         \
    template Var pad_replicate<T>(GradTape<T>&, Var, Index, Index);                      \
    template Var row_max_mean<T>(GradTape<T>&, Var);                                     \
    template Var col_max_mean<T>(GradTape<T>&, Var);                                     \
    template Var saturation_penalty<T>(GradTape<T>&, Var);

VISIL_INSTANTIATE_AD(float)
VISIL_INSTANTIATE_AD(double)

}  // namespace ad

}  // namespace visil
