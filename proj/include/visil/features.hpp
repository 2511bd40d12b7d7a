#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visil/grad_tape.hpp"
#include "visil/tensor.hpp"

namespace visil {

/// Raw activations of one frame: K maps of H_k x W_k x C_k.
struct FeatureMapStack {
    std::vector<Tensorf> layers;
    double timestamp = 0.0;

    Index channels() const;
    void validate() const;
};

/// N x N grid of C-dimensional region vectors describing one frame.
template <typename Scalar>
class FrameDescriptor {
public:
    FrameDescriptor() = default;
    explicit FrameDescriptor(Tensor<Scalar> regions);

    Index grid() const { return regions_.dim(0); }
    Index region_count() const { return grid() * grid(); }
    Index channels() const { return regions_.dim(2); }

    const Tensor<Scalar>& tensor() const { return regions_; }
    Tensor<Scalar>& tensor() { return regions_; }
    /// (N*N) x C view, regions in row-major (i, j) order.
    auto region_matrix() const { return regions_.matrix(region_count()); }
    auto region_matrix() { return regions_.matrix(region_count()); }

private:
    Tensor<Scalar> regions_;
};

/// Ordered frames of one video sharing grid N and channel count C, stored
/// contiguously as X x N x N x C.
template <typename Scalar>
class VideoTensor {
public:
    VideoTensor() = default;
    VideoTensor(std::string id, Tensor<Scalar> regions);
    static VideoTensor from_frames(std::string id, std::span<const FrameDescriptor<Scalar>> frames);

    const std::string& id() const { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }
    Index frames() const { return regions_.dim(0); }
    Index grid() const { return regions_.dim(1); }
    Index regions_per_frame() const { return grid() * grid(); }
    Index channels() const { return regions_.dim(3); }

    const Tensor<Scalar>& tensor() const { return regions_; }
    Tensor<Scalar>& tensor() { return regions_; }
    /// (X*N*N) x C view of all region vectors.
    auto region_matrix() const { return regions_.matrix(frames() * regions_per_frame()); }
    auto region_matrix() { return regions_.matrix(frames() * regions_per_frame()); }

    FrameDescriptor<Scalar> frame(Index x) const;
    /// Frames [begin, begin + count).
    VideoTensor slice(Index begin, Index count) const;

    template <typename Other>
    VideoTensor<Other> cast() const {
        return VideoTensor<Other>(id_, regions_.template cast<Other>());
    }

private:
    std::string id_;
    Tensor<Scalar> regions_;
};

using FrameDescriptorf = FrameDescriptor<float>;
using VideoTensorf = VideoTensor<float>;

/// L_N-iMAC: max-pool every layer over an N x N grid, l2-normalize each
/// region per layer, concatenate channels and l2-normalize again.
FrameDescriptorf region_pool(const FeatureMapStack& stack, Index level);
VideoTensorf region_pool_video(std::string id, std::span<const FeatureMapStack> frames, Index level);

/// Scales every row to unit l2 norm; all-zero rows stay zero.
template <typename Derived>
void normalize_rows(Eigen::MatrixBase<Derived>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        const double norm = m.row(r).template cast<double>().norm();
        if (norm > 0.0) m.row(r) /= static_cast<typename Derived::Scalar>(norm);
    }
}

/// PCA whitening: y = P (x - mean), P = diag(lambda^-1/2) V^T over the
/// retained eigenpairs, largest eigenvalue first.
struct WhiteningModel {
    Vector<float> mean;
    RowMatrix<float> projection;  // output_dim x input_dim
    Vector<double> eigenvalues;   // retained, descending

    Index input_dim() const { return projection.cols(); }
    Index output_dim() const { return projection.rows(); }
    static WhiteningModel identity(Index dim);

    friend bool operator==(const WhiteningModel& a, const WhiteningModel& b);
};

inline constexpr double kEigenvalueFloor = 1e-8;

/// Fits on the rows of `sample`. With `output_dim` the model also reduces
/// dimensionality to the leading components.
WhiteningModel fit_whitening(const RowMatrix<float>& sample, std::optional<Index> output_dim = std::nullopt);

/// Centers, projects and l2-renormalizes each region vector.
FrameDescriptorf apply_whitening(const FrameDescriptorf& desc, const WhiteningModel& model);
VideoTensorf apply_whitening(const VideoTensorf& video, const WhiteningModel& model);

/// Up to `max_vectors` region vectors drawn uniformly (seeded) from videos.
RowMatrix<float> sample_regions(std::span<const VideoTensorf> videos, Index max_vectors, std::uint64_t seed);

inline constexpr double kUnitNormTolerance = 1e-4;

/// r' = (u.r / 2 + 0.5) r for every region vector; ||u|| must be 1.
template <typename Scalar>
FrameDescriptor<Scalar> attention_weight(const FrameDescriptor<Scalar>& desc, const Tensor<Scalar>& u);
template <typename Scalar>
VideoTensor<Scalar> attention_weight(const VideoTensor<Scalar>& video, const Tensor<Scalar>& u);

/// Per-region weights (u.r / 2 + 0.5), one per region of the frame.
template <typename Scalar>
std::vector<double> attention_weights(const FrameDescriptor<Scalar>& desc, const Tensor<Scalar>& u);

namespace ad {

/// Differentiable attention over an X x N x N x C video with context u (C).
template <typename S>
Var attend(GradTape<S>& t, Var video, Var u);

}  // namespace ad

}  // namespace visil
