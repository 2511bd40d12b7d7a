#pragma once

#include <cstdint>
#include <vector>

#include "visil/tensor.hpp"

namespace visil {

enum class Padding { same, valid };

/// Sum of a[k]*b[k] accumulated in double with a fixed reduction order,
/// so a given pair of rows always produces the same bits.
template <typename Scalar>
double dot_accumulate(const Scalar* a, const Scalar* b, Index n);

/// out(i, j) = <a_row(i), b_row(j)> for row-major a (rows_a x depth) and
/// b (rows_b x depth). out is row-major rows_a x rows_b.
template <typename Scalar>
void contract_rows(const Scalar* a, Index rows_a, const Scalar* b, Index rows_b, Index depth, Scalar* out);

/// Tensor contraction over one axis of each operand (0-based axes). The
/// result carries a's remaining axes followed by b's remaining axes.
template <typename Scalar>
Tensor<Scalar> tensor_dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b, int axis_a, int axis_b);

/// Output extent of a 2-D window op along one axis.
Index conv_output_extent(Index extent, Index kernel, Index stride, Padding padding);

/// Cross-correlation of an H x W x Cin input with a k x k x Cin x Cout kernel.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, Index stride = 1,
                      Padding padding = Padding::same);

/// Adds bias[c] to every (h, w, c) entry of an H x W x C tensor.
template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& input, const Tensor<Scalar>& bias);

/// Max pooling over H x W x C with ceil-mode output extents; the missing
/// right/bottom cells behave as -inf.
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window = 2, Index stride = 2);

/// As max_pool2d, also writing the flat input offset of every selected
/// maximum (first in row-major order on ties).
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window, Index stride, std::vector<Index>& argmax);

template <typename Scalar>
Tensor<Scalar> relu(Tensor<Scalar> x);

template <typename Scalar>
Tensor<Scalar> hard_tanh(Tensor<Scalar> x);

namespace detail {

struct ConvGeometry {
    Index height, width, in_channels, kernel, out_channels, stride;
    Index out_height, out_width, pad_top, pad_left;

    static ConvGeometry make(const Shape& input, const Shape& kernel, Index stride, Padding padding);
    Index patch_size() const { return kernel * kernel * in_channels; }
};

/// Patch matrix (out_height*out_width) x (k*k*Cin); zero outside the input.
template <typename Scalar>
RowMatrix<double> im2col(const Tensor<Scalar>& input, const ConvGeometry& g);

/// Scatter-add of a patch-matrix gradient back to input layout.
template <typename Scalar>
void col2im(const RowMatrix<double>& cols, const ConvGeometry& g, Tensor<Scalar>& input_grad);

}  // namespace detail

}  // namespace visil
