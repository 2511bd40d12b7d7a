#include "visil/kernels.hpp"

#include <limits>

namespace visil {

template <typename Scalar>
double dot_accumulate(const Scalar* a, const Scalar* b, Index n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    Index k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += static_cast<double>(a[k]) * static_cast<double>(b[k]);
        s1 += static_cast<double>(a[k + 1]) * static_cast<double>(b[k + 1]);
        s2 += static_cast<double>(a[k + 2]) * static_cast<double>(b[k + 2]);
        s3 += static_cast<double>(a[k + 3]) * static_cast<double>(b[k + 3]);
    }
    for (; k < n; ++k) s0 += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    return (s0 + s1) + (s2 + s3);
}

template <typename Scalar>
void contract_rows(const Scalar* a, Index rows_a, const Scalar* b, Index rows_b, Index depth, Scalar* out) {
    for (Index i = 0; i < rows_a; ++i) {
        const Scalar* ai = a + i * depth;
        Scalar* oi = out + i * rows_b;
        for (Index j = 0; j < rows_b; ++j) oi[j] = static_cast<Scalar>(dot_accumulate(ai, b + j * depth, depth));
    }
}

namespace {

// Copies t into a (size/K) x K row-major buffer with `axis` moved last.
template <typename Scalar>
std::vector<Scalar> move_axis_last(const Tensor<Scalar>& t, int axis) {
    const Shape& s = t.shape();
    const Index extent = s[axis];
    Index outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[a];
    for (int a = axis + 1; a < s.rank(); ++a) inner *= s[a];
    std::vector<Scalar> out(static_cast<std::size_t>(t.size()));
    const Scalar* src = t.data();
    for (Index o = 0; o < outer; ++o)
        for (Index k = 0; k < extent; ++k)
            for (Index i = 0; i < inner; ++i)
                out[static_cast<std::size_t>((o * inner + i) * extent + k)] = src[(o * extent + k) * inner + i];
    return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> tensor_dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b, int axis_a, int axis_b) {
    if (axis_a < 0 || axis_a >= a.rank() || axis_b < 0 || axis_b >= b.rank())
        throw ShapeError("tensor_dot: contraction axis out of range");
    const Index depth = a.dim(axis_a);
    if (depth != b.dim(axis_b))
        throw ShapeError("tensor_dot: contracted extents differ (" + std::to_string(depth) + " vs " +
                         std::to_string(b.dim(axis_b)) + ")");
    std::vector<Index> out_shape = a.shape().without(axis_a);
    const std::vector<Index> rest_b = b.shape().without(axis_b);
    out_shape.insert(out_shape.end(), rest_b.begin(), rest_b.end());
    if (out_shape.size() > static_cast<std::size_t>(Shape::kMaxRank))
        throw ShapeError("tensor_dot: output rank " + std::to_string(out_shape.size()) + " exceeds 4");
    if (out_shape.empty()) out_shape.push_back(1);

    const std::vector<Scalar> lhs = move_axis_last(a, axis_a);
    const std::vector<Scalar> rhs = move_axis_last(b, axis_b);
    Tensor<Scalar> out{Shape(std::span<const Index>(out_shape))};
    contract_rows(lhs.data(), a.size() / depth, rhs.data(), b.size() / depth, depth, out.data());
    return out;
}

Index conv_output_extent(Index extent, Index kernel, Index stride, Padding padding) {
    if (stride < 1) throw InvalidArgument("stride must be positive");
    if (padding == Padding::same) return (extent + stride - 1) / stride;
    if (extent < kernel) throw ShapeError("input extent smaller than kernel");
    return (extent - kernel) / stride + 1;
}

namespace detail {

ConvGeometry ConvGeometry::make(const Shape& input, const Shape& kernel, Index stride, Padding padding) {
    if (input.rank() != 3) throw ShapeError("conv2d: input must be H x W x C, got " + input.str());
    if (kernel.rank() != 4 || kernel[0] != kernel[1])
        throw ShapeError("conv2d: kernel must be k x k x Cin x Cout, got " + kernel.str());
    if (kernel[2] != input[2]) throw ShapeError("conv2d: kernel input channels do not match input");
    ConvGeometry g{};
    g.height = input[0];
    g.width = input[1];
    g.in_channels = input[2];
    g.kernel = kernel[0];
    g.out_channels = kernel[3];
    g.stride = stride;
    g.out_height = conv_output_extent(g.height, g.kernel, stride, padding);
    g.out_width = conv_output_extent(g.width, g.kernel, stride, padding);
    if (padding == Padding::same) {
        const Index pad_h = std::max<Index>((g.out_height - 1) * stride + g.kernel - g.height, 0);
        const Index pad_w = std::max<Index>((g.out_width - 1) * stride + g.kernel - g.width, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
        if (g.height + pad_h < g.kernel || g.width + pad_w < g.kernel)
            throw ShapeError("conv2d: padded input smaller than kernel");
    }
    return g;
}

template <typename Scalar>
RowMatrix<double> im2col(const Tensor<Scalar>& input, const ConvGeometry& g) {
    RowMatrix<double> cols = RowMatrix<double>::Zero(g.out_height * g.out_width, g.patch_size());
    const Scalar* src = input.data();
    for (Index oy = 0; oy < g.out_height; ++oy)
        for (Index ox = 0; ox < g.out_width; ++ox) {
            double* row = cols.data() + (oy * g.out_width + ox) * g.patch_size();
            for (Index ky = 0; ky < g.kernel; ++ky) {
                const Index y = oy * g.stride + ky - g.pad_top;
                if (y < 0 || y >= g.height) continue;
                for (Index kx = 0; kx < g.kernel; ++kx) {
                    const Index x = ox * g.stride + kx - g.pad_left;
                    if (x < 0 || x >= g.width) continue;
                    const Scalar* px = src + (y * g.width + x) * g.in_channels;
                    double* dst = row + (ky * g.kernel + kx) * g.in_channels;
                    for (Index c = 0; c < g.in_channels; ++c) dst[c] = static_cast<double>(px[c]);
                }
            }
        }
    return cols;
}

template <typename Scalar>
void col2im(const RowMatrix<double>& cols, const ConvGeometry& g, Tensor<Scalar>& input_grad) {
    Scalar* dst = input_grad.data();
    for (Index oy = 0; oy < g.out_height; ++oy)
        for (Index ox = 0; ox < g.out_width; ++ox) {
            const double* row = cols.data() + (oy * g.out_width + ox) * g.patch_size();
            for (Index ky = 0; ky < g.kernel; ++ky) {
                const Index y = oy * g.stride + ky - g.pad_top;
                if (y < 0 || y >= g.height) continue;
                for (Index kx = 0; kx < g.kernel; ++kx) {
                    const Index x = ox * g.stride + kx - g.pad_left;
                    if (x < 0 || x >= g.width) continue;
                    Scalar* px = dst + (y * g.width + x) * g.in_channels;
                    const double* src = row + (ky * g.kernel + kx) * g.in_channels;
                    for (Index c = 0; c < g.in_channels; ++c) px[c] += static_cast<Scalar>(src[c]);
                }
            }
        }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, Index stride, Padding padding) {
    const auto g = detail::ConvGeometry::make(input.shape(), kernel.shape(), stride, padding);
    const RowMatrix<double> cols = detail::im2col(input, g);
    const RowMatrix<double> weights = kernel.matrix(g.patch_size()).template cast<double>();
    const RowMatrix<double> out = cols * weights;
    Tensor<Scalar> result(Shape{g.out_height, g.out_width, g.out_channels});
    result.matrix(g.out_height * g.out_width) = out.template cast<Scalar>();
    return result;
}

template <typename Scalar>
Tensor<Scalar> add_channel_bias(const Tensor<Scalar>& input, const Tensor<Scalar>& bias) {
    if (input.rank() != 3 || bias.rank() != 1 || bias.dim(0) != input.dim(2))
        throw ShapeError("add_channel_bias: bias must have one entry per channel");
    Tensor<Scalar> out = input;
    const Index channels = bias.dim(0);
    for (Index i = 0; i < out.size(); ++i) out[i] += bias[i % channels];
    return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window, Index stride, std::vector<Index>& argmax) {
    if (input.rank() != 3) throw ShapeError("max_pool2d: input must be H x W x C");
    const Index h = input.dim(0), w = input.dim(1), c = input.dim(2);
    if (h < window || w < window)
        throw ShapeError("max_pool2d: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than window");
    const Index oh = (h - window + stride - 1) / stride + 1;
    const Index ow = (w - window + stride - 1) / stride + 1;
    Tensor<Scalar> out(Shape{oh, ow, c});
    argmax.assign(static_cast<std::size_t>(out.size()), 0);
    for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox)
            for (Index ch = 0; ch < c; ++ch) {
                Scalar best = -std::numeric_limits<Scalar>::infinity();
                Index best_at = -1;
                for (Index ky = 0; ky < window; ++ky) {
                    const Index y = oy * stride + ky;
                    if (y >= h) break;
                    for (Index kx = 0; kx < window; ++kx) {
                        const Index x = ox * stride + kx;
                        if (x >= w) break;
                        const Index at = (y * w + x) * c + ch;
                        if (best_at < 0 || input[at] > best) {
                            best = input[at];
                            best_at = at;
                        }
                    }
                }
                const Index o = (oy * ow + ox) * c + ch;
                out[o] = best;
                argmax[static_cast<std::size_t>(o)] = best_at;
            }
    return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index window, Index stride) {
    std::vector<Index> unused;
    return max_pool2d(input, window, stride, unused);
}

template <typename Scalar>
Tensor<Scalar> relu(Tensor<Scalar> x) {
    for (auto& v : x.values()) v = v > Scalar(0) ? v : Scalar(0);
    return x;
}

template <typename Scalar>
Tensor<Scalar> hard_tanh(Tensor<Scalar> x) {
    for (auto& v : x.values()) v = std::clamp(v, Scalar(-1), Scalar(1));
    return x;
}

#define VISIL_INSTANTIATE_KERNELS(T)                                                                      \
    template double dot_accumulate<T>(const T*, const T*, Index);                                         \
    template void contract_rows<T>(const T*, Index, const T*, Index, Index, T*);                         \
    template Tensor<T> tensor_dot<T>(const Tensor<T>&, const Tensor<T>&, int, int);                      \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Index, Padding);                    \
    template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> max_pool2d<T>(const Tensor<T>&, Index, Index);                                     \
    template Tensor<T> max_pool2d<T>(const Tensor<T>&, Index, Index, std::vector<Index>&);                \
    template Tensor<T> relu<T>(Tensor<T>);                                                                \
    template Tensor<T> hard_tanh<T>(Tensor<T>);                                                           \
    template RowMatrix<double> detail::im2col<T>(const Tensor<T>&, const detail::ConvGeometry&);          \
    template void detail::col2im<T>(const RowMatrix<double>&, const detail::ConvGeometry&, Tensor<T>&);

VISIL_INSTANTIATE_KERNELS(float)
VISIL_INSTANTIATE_KERNELS(double)

}  // namespace visil
