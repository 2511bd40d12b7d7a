#include "visil/features.hpp"

#include <numeric>
#include <random>

namespace visil {

Index FeatureMapStack::channels() const {
    Index c = 0;
    for (const auto& layer : layers) c += layer.dim(2);
    return c;
}

void FeatureMapStack::validate() const {
    if (layers.empty()) throw InvalidArgument("feature stack has no layers");
    for (const auto& layer : layers)
        if (layer.rank() != 3) throw ShapeError("feature layer must be H x W x C, got " + layer.shape().str());
}

template <typename Scalar>
FrameDescriptor<Scalar>::FrameDescriptor(Tensor<Scalar> regions) : regions_(std::move(regions)) {
    if (regions_.rank() != 3 || regions_.dim(0) != regions_.dim(1))
        throw ShapeError("frame descriptor must be N x N x C, got " + regions_.shape().str());
}

template <typename Scalar>
VideoTensor<Scalar>::VideoTensor(std::string id, Tensor<Scalar> regions) : id_(std::move(id)), regions_(std::move(regions)) {
    if (regions_.rank() != 4 || regions_.dim(1) != regions_.dim(2))
        throw ShapeError("video tensor must be X x N x N x C, got " + regions_.shape().str());
}

template <typename Scalar>
VideoTensor<Scalar> VideoTensor<Scalar>::from_frames(std::string id, std::span<const FrameDescriptor<Scalar>> frames) {
    if (frames.empty()) throw InvalidArgument("video must have at least one frame");
    const Index n = frames.front().grid(), c = frames.front().channels();
    Tensor<Scalar> all(Shape{static_cast<Index>(frames.size()), n, n, c});
    Scalar* dst = all.data();
    for (const auto& f : frames) {
        if (f.grid() != n || f.channels() != c) throw ShapeError("frames of a video must share grid and channels");
        dst = std::copy(f.tensor().data(), f.tensor().data() + f.tensor().size(), dst);
    }
    return VideoTensor(std::move(id), std::move(all));
}

template <typename Scalar>
FrameDescriptor<Scalar> VideoTensor<Scalar>::frame(Index x) const {
    if (x < 0 || x >= frames()) throw InvalidArgument("frame index out of range");
    const Index per = regions_per_frame() * channels();
    std::vector<Scalar> values(regions_.data() + x * per, regions_.data() + (x + 1) * per);
    return FrameDescriptor<Scalar>(Tensor<Scalar>(Shape{grid(), grid(), channels()}, std::move(values)));
}

template <typename Scalar>
VideoTensor<Scalar> VideoTensor<Scalar>::slice(Index begin, Index count) const {
    if (begin < 0 || count < 1 || begin + count > frames()) throw InvalidArgument("frame slice out of range");
    const Index per = regions_per_frame() * channels();
    std::vector<Scalar> values(regions_.data() + begin * per, regions_.data() + (begin + count) * per);
    return VideoTensor(id_, Tensor<Scalar>(Shape{count, grid(), grid(), channels()}, std::move(values)));
}

template class FrameDescriptor<float>;
template class FrameDescriptor<double>;
template class VideoTensor<float>;
template class VideoTensor<double>;

FrameDescriptorf region_pool(const FeatureMapStack& stack, Index level) {
    stack.validate();
    if (level < 1) throw InvalidArgument("region level must be >= 1");
    const Index channels = stack.channels();
    Tensorf out(Shape{level, level, channels});
    auto regions = out.matrix(level * level);

    Index channel_offset = 0;
    for (const auto& layer : stack.layers) {
        const Index h = layer.dim(0), w = layer.dim(1), c = layer.dim(2);
        if (h < level || w < level)
            throw ShapeError("layer of " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than grid " +
                             std::to_string(level));
        for (Index i = 0; i < level; ++i) {
            const Index y0 = i * h / level, y1 = (i + 1) * h / level;
            for (Index j = 0; j < level; ++j) {
                const Index x0 = j * w / level, x1 = (j + 1) * w / level;
                auto region = regions.row(i * level + j).segment(channel_offset, c);
                region.setConstant(-std::numeric_limits<float>::infinity());
                for (Index y = y0; y < y1; ++y)
                    for (Index x = x0; x < x1; ++x)
                        for (Index ch = 0; ch < c; ++ch) region[ch] = std::max(region[ch], layer.at(y, x, ch));
                const double norm = region.cast<double>().norm();
                if (norm > 0.0) region /= static_cast<float>(norm);
            }
        }
        channel_offset += c;
    }
    normalize_rows(regions);
    return FrameDescriptorf(std::move(out));
}

VideoTensorf region_pool_video(std::string id, std::span<const FeatureMapStack> frames, Index level) {
    std::vector<FrameDescriptorf> pooled;
    pooled.reserve(frames.size());
    for (const auto& f : frames) pooled.push_back(region_pool(f, level));
    return VideoTensorf::from_frames(std::move(id), pooled);
}

WhiteningModel WhiteningModel::identity(Index dim) {
    return {Vector<float>::Zero(dim), RowMatrix<float>::Identity(dim, dim), Vector<double>::Ones(dim)};
}

bool operator==(const WhiteningModel& a, const WhiteningModel& b) {
    return a.mean == b.mean && a.projection == b.projection && a.eigenvalues == b.eigenvalues;
}

WhiteningModel fit_whitening(const RowMatrix<float>& sample, std::optional<Index> output_dim) {
    const Index n = sample.rows(), dim = sample.cols();
    const Index keep = output_dim.value_or(dim);
    if (keep < 1 || keep > dim) throw InvalidArgument("whitening output dimension must be in [1, input dimension]");
    if (n <= keep)
        throw InvalidArgument("whitening needs more samples (" + std::to_string(n) + ") than dimensions (" +
                              std::to_string(keep) + ")");

    const RowMatrix<double> x = sample.cast<double>();
    const Vector<double> mean = x.colwise().mean().transpose();
    const RowMatrix<double> centered = x.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw RankDeficiencyError("eigendecomposition of the covariance failed");

    WhiteningModel model;
    model.mean = mean.cast<float>();
    model.projection.resize(keep, dim);
    model.eigenvalues.resize(keep);
    for (Index k = 0; k < keep; ++k) {
        const Index src = dim - 1 - k;  // ascending order from the solver
        const double lambda = eig.eigenvalues()[src];
        if (lambda < kEigenvalueFloor)
            throw RankDeficiencyError("covariance eigenvalue " + std::to_string(lambda) +
                                      " is below the floor; request a dimensionality reduction");
        model.eigenvalues[k] = lambda;
        model.projection.row(k) = (eig.eigenvectors().col(src) / std::sqrt(lambda)).transpose().cast<float>();
    }
    return model;
}

namespace {

RowMatrix<float> whiten_rows(const Eigen::Ref<const RowMatrix<float>>& rows, const WhiteningModel& model) {
    if (rows.cols() != model.input_dim())
        throw ShapeError("whitening expects " + std::to_string(model.input_dim()) + " channels, got " +
                         std::to_string(rows.cols()));
    const RowMatrix<double> centered = rows.cast<double>().rowwise() - model.mean.cast<double>().transpose();
    RowMatrix<double> projected = centered * model.projection.cast<double>().transpose();
    for (Index r = 0; r < rows.rows(); ++r)
        if (rows.row(r).isZero(0.0)) projected.row(r).setZero();
    normalize_rows(projected);
    return projected.cast<float>();
}

}  // namespace

FrameDescriptorf apply_whitening(const FrameDescriptorf& desc, const WhiteningModel& model) {
    Tensorf out(Shape{desc.grid(), desc.grid(), model.output_dim()});
    out.matrix(desc.region_count()) = whiten_rows(desc.region_matrix(), model);
    return FrameDescriptorf(std::move(out));
}

VideoTensorf apply_whitening(const VideoTensorf& video, const WhiteningModel& model) {
    Tensorf out(Shape{video.frames(), video.grid(), video.grid(), model.output_dim()});
    out.matrix(video.frames() * video.regions_per_frame()) = whiten_rows(video.region_matrix(), model);
    return VideoTensorf(video.id(), std::move(out));
}

RowMatrix<float> sample_regions(std::span<const VideoTensorf> videos, Index max_vectors, std::uint64_t seed) {
    std::vector<std::pair<std::size_t, Index>> all;
    for (std::size_t v = 0; v < videos.size(); ++v)
        for (Index r = 0; r < videos[v].frames() * videos[v].regions_per_frame(); ++r) all.emplace_back(v, r);
    if (all.empty()) throw InvalidArgument("no region vectors to sample");
    std::mt19937_64 rng(seed);
    if (static_cast<Index>(all.size()) > max_vectors) {
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(static_cast<std::size_t>(max_vectors));
    }
    const Index dim = videos[all.front().first].channels();
    RowMatrix<float> out(static_cast<Index>(all.size()), dim);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& [v, r] = all[i];
        if (videos[v].channels() != dim) throw ShapeError("videos disagree on channel count");
        out.row(static_cast<Index>(i)) = videos[v].region_matrix().row(r);
    }
    return out;
}

namespace {

template <typename Scalar>
void check_context(const Tensor<Scalar>& u, Index channels) {
    if (u.rank() != 1 || u.dim(0) != channels)
        throw ShapeError("attention context must have " + std::to_string(channels) + " entries");
    const double norm = u.flat().template cast<double>().norm();
    if (std::abs(norm - 1.0) > kUnitNormTolerance)
        throw InvalidArgument("attention context must be unit norm, got " + std::to_string(norm));
}

template <typename Scalar, typename Rows>
void weight_rows(Rows& rows, const Tensor<Scalar>& u) {
    for (Index r = 0; r < rows.rows(); ++r) {
        const double alpha = dot_accumulate(rows.row(r).data(), u.data(), u.size());
        rows.row(r) *= static_cast<Scalar>(alpha / 2.0 + 0.5);
    }
}

}  // namespace

template <typename Scalar>
std::vector<double> attention_weights(const FrameDescriptor<Scalar>& desc, const Tensor<Scalar>& u) {
    check_context(u, desc.channels());
    std::vector<double> w(static_cast<std::size_t>(desc.region_count()));
    const auto rows = desc.region_matrix();
    for (Index r = 0; r < rows.rows(); ++r)
        w[static_cast<std::size_t>(r)] = dot_accumulate(rows.row(r).data(), u.data(), u.size()) / 2.0 + 0.5;
    return w;
}

template <typename Scalar>
FrameDescriptor<Scalar> attention_weight(const FrameDescriptor<Scalar>& desc, const Tensor<Scalar>& u) {
    check_context(u, desc.channels());
    FrameDescriptor<Scalar> out = desc;
    auto rows = out.region_matrix();
    weight_rows(rows, u);
    return out;
}

template <typename Scalar>
VideoTensor<Scalar> attention_weight(const VideoTensor<Scalar>& video, const Tensor<Scalar>& u) {
    check_context(u, video.channels());
    VideoTensor<Scalar> out = video;
    auto rows = out.region_matrix();
    weight_rows(rows, u);
    return out;
}

template std::vector<double> attention_weights<float>(const FrameDescriptor<float>&, const Tensor<float>&);
template std::vector<double> attention_weights<double>(const FrameDescriptor<double>&, const Tensor<double>&);
template FrameDescriptor<float> attention_weight<float>(const FrameDescriptor<float>&, const Tensor<float>&);
template FrameDescriptor<double> attention_weight<double>(const FrameDescriptor<double>&, const Tensor<double>&);
template VideoTensor<float> attention_weight<float>(const VideoTensor<float>&, const Tensor<float>&);
template VideoTensor<double> attention_weight<double>(const VideoTensor<double>&, const Tensor<double>&);

namespace ad {

template <typename S>
Var attend(GradTape<S>& t, Var video, Var u) {
    const Tensor<S>& v = t.value(video);
    if (v.rank() != 4) throw ShapeError("attend: expected an X x N x N x C video");
    const Index channels = v.dim(3);
    // The differentiable op takes u off the sphere too, so finite differences see the ambient function.
    if (t.value(u).rank() != 1 || t.value(u).dim(0) != channels)
        throw ShapeError("attention context must have " + std::to_string(channels) + " entries");
    const Index rows = v.size() / channels;
    Tensor<S> out = v;
    std::vector<double> alpha(static_cast<std::size_t>(rows));
    const S* uu = t.value(u).data();
    for (Index r = 0; r < rows; ++r) {
        S* row = out.data() + r * channels;
        alpha[static_cast<std::size_t>(r)] = dot_accumulate(row, uu, channels);
        const S w = static_cast<S>(alpha[static_cast<std::size_t>(r)] / 2.0 + 0.5);
        for (Index c = 0; c < channels; ++c) row[c] *= w;
    }
    return t.record(std::move(out), {video, u},
                    [video, u, rows, channels, alpha = std::move(alpha)](const Tensor<S>& g, GradTape<S>& tape) {
                        const Tensor<S>& v = tape.value(video);
                        const Tensor<S>& uu = tape.value(u);
                        std::vector<double> du(static_cast<std::size_t>(channels), 0.0);
                        Tensor<S>* dv = tape.requires_grad(video) ? &tape.grad_buffer(video) : nullptr;
                        for (Index r = 0; r < rows; ++r) {
                            const S* gr = g.data() + r * channels;
                            const S* vr = v.data() + r * channels;
                            // dL/dw for this region; w = alpha / 2 + 0.5
                            const double dw = dot_accumulate(gr, vr, channels);
                            for (Index c = 0; c < channels; ++c)
                                du[static_cast<std::size_t>(c)] += 0.5 * dw * static_cast<double>(vr[c]);
                            if (dv) {
                                const double w = alpha[static_cast<std::size_t>(r)] / 2.0 + 0.5;
                                S* dvr = dv->data() + r * channels;
                                for (Index c = 0; c < channels; ++c)
                                    dvr[c] += static_cast<S>(w * static_cast<double>(gr[c]) +
                                                             0.5 * dw * static_cast<double>(uu[c]));
                            }
                        }
                        if (tape.requires_grad(u)) {
                            Tensor<S>& gu = tape.grad_buffer(u);
                            for (Index c = 0; c < channels; ++c) gu[c] += static_cast<S>(du[static_cast<std::size_t>(c)]);
                        }
                    });
}

template Var attend<float>(GradTape<float>&, Var, Var);
template Var attend<double>(GradTape<double>&, Var, Var);

}  // namespace ad

}  // namespace visil
