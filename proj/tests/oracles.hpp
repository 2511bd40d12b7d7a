#pragma once

// Brute-force reference implementations in double precision. They share no
// code with the library beyond the Tensor container used to pass data in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "visil/tensor.hpp"

namespace oracle {

using visil::Index;

struct Grid {
    std::vector<Index> dims;
    std::vector<double> v;

    Index size() const {
        Index n = 1;
        for (Index d : dims) n *= d;
        return n;
    }
    Index flat(const std::vector<Index>& idx) const {
        Index off = 0;
        for (std::size_t a = 0; a < dims.size(); ++a) off = off * dims[a] + idx[a];
        return off;
    }
    double& operator()(const std::vector<Index>& idx) { return v[static_cast<std::size_t>(flat(idx))]; }
    double operator()(const std::vector<Index>& idx) const { return v[static_cast<std::size_t>(flat(idx))]; }
};

template <typename S>
Grid from_tensor(const visil::Tensor<S>& t) {
    Grid g;
    for (Index d : t.shape().extents()) g.dims.push_back(d);
    g.v.assign(t.values().begin(), t.values().end());
    return g;
}

// Odometer over all multi-indices of `dims`.
inline bool next_index(std::vector<Index>& idx, const std::vector<Index>& dims) {
    for (std::size_t a = dims.size(); a-- > 0;) {
        if (++idx[a] < dims[a]) return true;
        idx[a] = 0;
    }
    return false;
}

inline Grid tensor_dot(const Grid& a, const Grid& b, int axis_a, int axis_b) {
    Grid out;
    for (std::size_t i = 0; i < a.dims.size(); ++i)
        if (static_cast<int>(i) != axis_a) out.dims.push_back(a.dims[i]);
    for (std::size_t i = 0; i < b.dims.size(); ++i)
        if (static_cast<int>(i) != axis_b) out.dims.push_back(b.dims[i]);
    if (out.dims.empty()) out.dims.push_back(1);
    out.v.assign(static_cast<std::size_t>(out.size()), 0.0);
    const Index k = a.dims[static_cast<std::size_t>(axis_a)];
    std::vector<Index> ia(a.dims.size(), 0);
    do {
        if (ia[static_cast<std::size_t>(axis_a)] != 0) continue;
        std::vector<Index> ib(b.dims.size(), 0);
        do {
            if (ib[static_cast<std::size_t>(axis_b)] != 0) continue;
            double s = 0.0;
            for (Index c = 0; c < k; ++c) {
                auto xa = ia, xb = ib;
                xa[static_cast<std::size_t>(axis_a)] = c;
                xb[static_cast<std::size_t>(axis_b)] = c;
                s += a(xa) * b(xb);
            }
            std::vector<Index> io;
            for (std::size_t i = 0; i < ia.size(); ++i)
                if (static_cast<int>(i) != axis_a) io.push_back(ia[i]);
            for (std::size_t i = 0; i < ib.size(); ++i)
                if (static_cast<int>(i) != axis_b) io.push_back(ib[i]);
            if (io.empty()) io.push_back(0);
            out(io) = s;
        } while (next_index(ib, b.dims));
    } while (next_index(ia, a.dims));
    return out;
}

// TF-style padding: the extra row/column goes to the bottom/right.
inline Grid conv2d(const Grid& in, const Grid& kernel, Index stride, bool same) {
    const Index h = in.dims[0], w = in.dims[1], cin = in.dims[2];
    const Index k = kernel.dims[0], cout = kernel.dims[3];
    Index oh, ow, top = 0, left = 0;
    if (same) {
        oh = (h + stride - 1) / stride;
        ow = (w + stride - 1) / stride;
        top = std::max<Index>((oh - 1) * stride + k - h, 0) / 2;
        left = std::max<Index>((ow - 1) * stride + k - w, 0) / 2;
    } else {
        oh = (h - k) / stride + 1;
        ow = (w - k) / stride + 1;
    }
    Grid out{{oh, ow, cout}, std::vector<double>(static_cast<std::size_t>(oh * ow * cout), 0.0)};
    for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x)
            for (Index o = 0; o < cout; ++o) {
                double s = 0.0;
                for (Index dy = 0; dy < k; ++dy)
                    for (Index dx = 0; dx < k; ++dx) {
                        const Index sy = y * stride + dy - top, sx = x * stride + dx - left;
                        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                        for (Index c = 0; c < cin; ++c) s += in({sy, sx, c}) * kernel({dy, dx, c, o});
                    }
                out({y, x, o}) = s;
            }
    return out;
}

inline Grid add_bias(Grid g, const Grid& bias) {
    std::vector<Index> idx(g.dims.size(), 0);
    do g(idx) += bias.v[static_cast<std::size_t>(idx.back())];
    while (next_index(idx, g.dims));
    return g;
}

inline Grid max_pool(const Grid& in, Index window, Index stride) {
    const Index h = in.dims[0], w = in.dims[1], c = in.dims[2];
    const Index oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
    Grid out{{oh, ow, c}, std::vector<double>(static_cast<std::size_t>(oh * ow * c), 0.0)};
    for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x)
            for (Index ch = 0; ch < c; ++ch) {
                double m = -std::numeric_limits<double>::infinity();
                for (Index dy = 0; dy < window; ++dy)
                    for (Index dx = 0; dx < window; ++dx) {
                        const Index sy = y * stride + dy, sx = x * stride + dx;
                        if (sy < h && sx < w) m = std::max(m, in({sy, sx, ch}));
                    }
                out({y, x, ch}) = m;
            }
    return out;
}

inline Grid relu(Grid g) {
    for (double& x : g.v) x = std::max(x, 0.0);
    return g;
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix transpose(const Matrix& s) {
    Matrix t(s[0].size(), std::vector<double>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s[0].size(); ++j) t[j][i] = s[i][j];
    return t;
}

inline double chamfer(const Matrix& s) {
    double total = 0.0;
    for (const auto& row : s) {
        double m = row[0];
        for (double x : row)
            if (x > m) m = x;
        total += m;
    }
    return total / static_cast<double>(s.size());
}

inline double symmetric_chamfer(const Matrix& s) { return 0.5 * (chamfer(s) + chamfer(transpose(s))); }

inline double mean_all(const Matrix& s) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& row : s)
        for (double x : row) total += x, ++n;
    return total / static_cast<double>(n);
}

template <typename Derived>
Matrix to_matrix(const Derived& m) {
    Matrix out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out[i][j] = static_cast<double>(m(i, j));
    return out;
}

// Region vectors of frame x of an X x N x N x C tensor.
template <typename S>
std::vector<std::vector<double>> regions(const visil::Tensor<S>& video, Index x) {
    const Index n = video.dim(1), c = video.dim(3);
    std::vector<std::vector<double>> out;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            std::vector<double> r(static_cast<std::size_t>(c));
            for (Index k = 0; k < c; ++k) r[k] = static_cast<double>(video.at(x, i, j, k));
            out.push_back(std::move(r));
        }
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

enum class Reduce { chamfer, symmetric, average };

inline double frame_cs(const std::vector<std::vector<double>>& d, const std::vector<std::vector<double>>& b, Reduce how) {
    Matrix s(d.size(), std::vector<double>(b.size()));
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) s[i][j] = dot(d[i], b[j]);
    switch (how) {
        case Reduce::chamfer: return chamfer(s);
        case Reduce::symmetric: return symmetric_chamfer(s);
        case Reduce::average: return mean_all(s);
    }
    return 0.0;
}

template <typename S>
Matrix video_pair_matrix(const visil::Tensor<S>& q, const visil::Tensor<S>& p, Reduce how) {
    Matrix out(static_cast<std::size_t>(q.dim(0)), std::vector<double>(static_cast<std::size_t>(p.dim(0))));
    for (Index x = 0; x < q.dim(0); ++x)
        for (Index y = 0; y < p.dim(0); ++y) out[x][y] = frame_cs(regions(q, x), regions(p, y), how);
    return out;
}

inline void normalize(std::vector<double>& r) {
    double n = std::sqrt(dot(r, r));
    if (n > 0.0)
        for (double& x : r) x /= n;
}

// Cell (i, j) covers rows [floor(i H / N), floor((i + 1) H / N)).
inline std::vector<std::vector<double>> region_pool(const std::vector<Grid>& layers, Index level) {
    std::vector<std::vector<double>> out;
    for (Index i = 0; i < level; ++i)
        for (Index j = 0; j < level; ++j) {
            std::vector<double> region;
            for (const Grid& layer : layers) {
                const Index h = layer.dims[0], w = layer.dims[1], c = layer.dims[2];
                std::vector<double> part(static_cast<std::size_t>(c), -std::numeric_limits<double>::infinity());
                for (Index y = i * h / level; y < (i + 1) * h / level; ++y)
                    for (Index x = j * w / level; x < (j + 1) * w / level; ++x)
                        for (Index k = 0; k < c; ++k) part[k] = std::max(part[k], layer({y, x, k}));
                normalize(part);
                region.insert(region.end(), part.begin(), part.end());
            }
            normalize(region);
            out.push_back(std::move(region));
        }
    return out;
}

// conv-relu-pool, conv-relu-pool, conv-relu, conv (1x1).
inline Grid sim_cnn(const Grid& s_f, const std::vector<Grid>& weights, const std::vector<Grid>& biases) {
    Grid x{{s_f.dims[0], s_f.dims[1], 1}, s_f.v};
    x = max_pool(relu(add_bias(conv2d(x, weights[0], 1, true), biases[0])), 2, 2);
    x = max_pool(relu(add_bias(conv2d(x, weights[1], 1, true), biases[1])), 2, 2);
    x = relu(add_bias(conv2d(x, weights[2], 1, true), biases[2]));
    return add_bias(conv2d(x, weights[3], 1, true), biases[3]);
}

inline double triplet_loss(double pos, double neg, double margin) {
    const double v = neg - pos + margin;
    return v > 0.0 ? v : 0.0;
}

inline double regularization(const Matrix& s) {
    double total = 0.0;
    for (const auto& row : s)
        for (double x : row) {
            if (x > 1.0) total += x - 1.0;
            if (x < -1.0) total += -1.0 - x;
        }
    return total;
}

// Precision at each relevant rank, averaged.
inline double average_precision(const std::vector<bool>& relevance) {
    double hits = 0.0, total = 0.0;
    for (std::size_t k = 0; k < relevance.size(); ++k)
        if (relevance[k]) {
            hits += 1.0;
            total += hits / static_cast<double>(k + 1);
        }
    return hits > 0.0 ? total / hits : 0.0;
}

template <typename S>
visil::Tensor<S> random_tensor(const visil::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    visil::Tensor<S> t(shape);
    for (auto& x : t.values()) x = static_cast<S>(u(rng));
    return t;
}

// X x N x N x C tensor of unit-norm region vectors.
template <typename S>
visil::Tensor<S> random_unit_video(Index frames, Index grid, Index channels, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    visil::Tensor<S> t(visil::Shape{frames, grid, grid, channels});
    for (Index r = 0; r < frames * grid * grid; ++r) {
        std::vector<double> v(static_cast<std::size_t>(channels));
        for (double& x : v) x = g(rng);
        normalize(v);
        for (Index k = 0; k < channels; ++k) t[r * channels + k] = static_cast<S>(v[k]);
    }
    return t;
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace oracle
