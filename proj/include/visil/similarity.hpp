#pragma once

#include <string>
#include <string_view>

#include "visil/features.hpp"
#include "visil/grad_tape.hpp"

namespace visil {

/// MP-AP: max over one axis then average (Chamfer). AP-AP: average of all
/// entries.
enum class PoolingMode { mp_ap, ap_ap };

/// How a region-to-region block collapses to one frame-to-frame value.
enum class FrameReduction { chamfer, symmetric_chamfer, average };

PoolingMode parse_pooling_mode(std::string_view text);
std::string_view to_string(PoolingMode mode);
inline FrameReduction frame_reduction(PoolingMode mode) {
    return mode == PoolingMode::mp_ap ? FrameReduction::chamfer : FrameReduction::average;
}

enum class SimilarityRole { frame_level, video_level };

/// Dense score grid: frame-to-frame (S_f) or the network output (S_v).
template <typename Scalar>
struct SimilarityMatrix {
    RowMatrix<Scalar> values;
    SimilarityRole role = SimilarityRole::frame_level;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
};

using SimilarityMatrixf = SimilarityMatrix<float>;

/// Mean over rows of the row maximum. Not symmetric.
template <typename Derived>
double chamfer(const Eigen::MatrixBase<Derived>& s) {
    if (s.rows() < 1 || s.cols() < 1) throw ShapeError("chamfer: empty similarity matrix");
    double total = 0.0;
    for (Index i = 0; i < s.rows(); ++i) total += static_cast<double>(s.row(i).maxCoeff());
    return total / static_cast<double>(s.rows());
}

/// (chamfer(S) + chamfer(S^T)) / 2.
template <typename Derived>
double symmetric_chamfer(const Eigen::MatrixBase<Derived>& s) {
    return (chamfer(s) + chamfer(s.transpose())) / 2.0;
}

template <typename Derived>
double average_pool(const Eigen::MatrixBase<Derived>& s) {
    if (s.rows() < 1 || s.cols() < 1) throw ShapeError("average_pool: empty similarity matrix");
    double total = 0.0;
    for (Index i = 0; i < s.rows(); ++i)
        for (Index j = 0; j < s.cols(); ++j) total += static_cast<double>(s(i, j));
    return total / static_cast<double>(s.size());
}

template <typename Derived>
double reduce(const Eigen::MatrixBase<Derived>& s, FrameReduction how) {
    switch (how) {
        case FrameReduction::chamfer: return chamfer(s);
        case FrameReduction::symmetric_chamfer: return symmetric_chamfer(s);
        case FrameReduction::average: return average_pool(s);
    }
    return 0.0;
}

/// Region-to-region dot products of two frames, (N_d^2) x (N_b^2).
template <typename Scalar>
RowMatrix<Scalar> region_similarity(const FrameDescriptor<Scalar>& d, const FrameDescriptor<Scalar>& b);

/// Frame-to-frame similarity of two region grids.
template <typename Scalar>
double frame_cs(const FrameDescriptor<Scalar>& d, const FrameDescriptor<Scalar>& b, FrameReduction how);
template <typename Scalar>
double frame_cs(const FrameDescriptor<Scalar>& d, const FrameDescriptor<Scalar>& b, PoolingMode mode) {
    return frame_cs(d, b, frame_reduction(mode));
}

struct PairMatrixOptions {
    int threads = 1;
    /// Query frames contracted per batch; bounds scratch memory.
    Index frame_block = 8;
};

/// X x Y frame-to-frame matrix: one channel contraction per block of query
/// frames followed by the per-pair reduction. Bit-identical to calling
/// frame_cs on every pair, for any block size and thread count.
template <typename Scalar>
SimilarityMatrix<Scalar> video_pair_matrix(const VideoTensor<Scalar>& q, const VideoTensor<Scalar>& p,
                                           FrameReduction how, const PairMatrixOptions& options = {});
template <typename Scalar>
SimilarityMatrix<Scalar> video_pair_matrix(const VideoTensor<Scalar>& q, const VideoTensor<Scalar>& p,
                                           PoolingMode mode, const PairMatrixOptions& options = {}) {
    return video_pair_matrix(q, p, frame_reduction(mode), options);
}

namespace ad {

/// Differentiable video_pair_matrix over X x N x N x C and Y x M x M x C
/// inputs; yields an X x Y matrix.
template <typename S>
Var frame_similarity(GradTape<S>& t, Var q, Var p, FrameReduction how, const PairMatrixOptions& options = {});

}  // namespace ad

}  // namespace visil
