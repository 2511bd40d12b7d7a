#include "visil/similarity.hpp"

#include "visil/kernels.hpp"
#include "visil/parallel.hpp"

namespace visil {

PoolingMode parse_pooling_mode(std::string_view text) {
    if (text == "mp-ap") return PoolingMode::mp_ap;
    if (text == "ap-ap") return PoolingMode::ap_ap;
    throw InvalidArgument("unknown pooling mode '" + std::string(text) + "' (expected mp-ap or ap-ap)");
}

std::string_view to_string(PoolingMode mode) {
    return mode == PoolingMode::mp_ap ? "mp-ap" : "ap-ap";
}

template <typename Scalar>
RowMatrix<Scalar> region_similarity(const FrameDescriptor<Scalar>& d, const FrameDescriptor<Scalar>& b) {
    if (d.channels() != b.channels())
        throw ShapeError("frame channel mismatch: " + std::to_string(d.channels()) + " vs " +
                         std::to_string(b.channels()));
    RowMatrix<Scalar> s(d.region_count(), b.region_count());
    contract_rows(d.tensor().data(), d.region_count(), b.tensor().data(), b.region_count(), d.channels(), s.data());
    return s;
}

template <typename Scalar>
double frame_cs(const FrameDescriptor<Scalar>& d, const FrameDescriptor<Scalar>& b, FrameReduction how) {
    return reduce(region_similarity(d, b), how);
}

namespace {

// Row/column argmax of every region block, recorded for the backward pass.
struct PairArgmax {
    std::vector<Index> rows;  // [x][i][y] -> j
    std::vector<Index> cols;  // [x][y][j] -> i
};

template <typename Scalar>
RowMatrix<Scalar> pair_matrix(const Scalar* q, Index frames_q, Index regions_q, const Scalar* p, Index frames_p,
                              Index regions_p, Index channels, FrameReduction how, const PairMatrixOptions& options,
                              PairArgmax* argmax) {
    const bool need_rows = argmax && how != FrameReduction::average;
    const bool need_cols = argmax && how == FrameReduction::symmetric_chamfer;
    if (need_rows) argmax->rows.assign(static_cast<std::size_t>(frames_q * regions_q * frames_p), 0);
    if (need_cols) argmax->cols.assign(static_cast<std::size_t>(frames_q * frames_p * regions_p), 0);

    RowMatrix<Scalar> out(frames_q, frames_p);
    const Index block = std::max<Index>(options.frame_block, 1);
    const Index blocks = (frames_q + block - 1) / block;
    const Index width = frames_p * regions_p;

    parallel_for(blocks, options.threads, [&](Index b) {
        const Index x0 = b * block;
        const Index x1 = std::min(frames_q, x0 + block);
        std::vector<Scalar> scratch(static_cast<std::size_t>((x1 - x0) * regions_q * width));
        contract_rows(q + x0 * regions_q * channels, (x1 - x0) * regions_q, p, width, channels, scratch.data());

        for (Index x = x0; x < x1; ++x)
            for (Index y = 0; y < frames_p; ++y) {
                auto at = [&](Index i, Index j) {
                    return scratch[static_cast<std::size_t>(((x - x0) * regions_q + i) * width + y * regions_p + j)];
                };
                double value = 0.0;
                if (how == FrameReduction::average) {
                    for (Index i = 0; i < regions_q; ++i)
                        for (Index j = 0; j < regions_p; ++j) value += static_cast<double>(at(i, j));
                    value /= static_cast<double>(regions_q * regions_p);
                } else {
                    double forward = 0.0;
                    for (Index i = 0; i < regions_q; ++i) {
                        Index best = 0;
                        for (Index j = 1; j < regions_p; ++j)
                            if (at(i, j) > at(i, best)) best = j;
                        forward += static_cast<double>(at(i, best));
                        if (need_rows) argmax->rows[static_cast<std::size_t>((x * regions_q + i) * frames_p + y)] = best;
                    }
                    forward /= static_cast<double>(regions_q);
                    value = forward;
                    if (how == FrameReduction::symmetric_chamfer) {
                        double backward = 0.0;
                        for (Index j = 0; j < regions_p; ++j) {
                            Index best = 0;
                            for (Index i = 1; i < regions_q; ++i)
                                if (at(i, j) > at(best, j)) best = i;
                            backward += static_cast<double>(at(best, j));
                            if (need_cols)
                                argmax->cols[static_cast<std::size_t>((x * frames_p + y) * regions_p + j)] = best;
                        }
                        backward /= static_cast<double>(regions_p);
                        value = (forward + backward) / 2.0;
                    }
                }
                out(x, y) = static_cast<Scalar>(value);
            }
    });
    return out;
}

template <typename Scalar>
void check_pair(const Shape& q, const Shape& p) {
    if (q.rank() != 4 || p.rank() != 4) throw ShapeError("video tensors must be X x N x N x C");
    if (q[3] != p[3])
        throw ShapeError("video channel mismatch: " + std::to_string(q[3]) + " vs " + std::to_string(p[3]));
}

}  // namespace

template <typename Scalar>
SimilarityMatrix<Scalar> video_pair_matrix(const VideoTensor<Scalar>& q, const VideoTensor<Scalar>& p,
                                           FrameReduction how, const PairMatrixOptions& options) {
    check_pair<Scalar>(q.tensor().shape(), p.tensor().shape());
    return {pair_matrix(q.tensor().data(), q.frames(), q.regions_per_frame(), p.tensor().data(), p.frames(),
                        p.regions_per_frame(), q.channels(), how, options, nullptr),
            SimilarityRole::frame_level};
}

template RowMatrix<float> region_similarity<float>(const FrameDescriptor<float>&, const FrameDescriptor<float>&);
template RowMatrix<double> region_similarity<double>(const FrameDescriptor<double>&, const FrameDescriptor<double>&);
template double frame_cs<float>(const FrameDescriptor<float>&, const FrameDescriptor<float>&, FrameReduction);
template double frame_cs<double>(const FrameDescriptor<double>&, const FrameDescriptor<double>&, FrameReduction);
template SimilarityMatrix<float> video_pair_matrix<float>(const VideoTensor<float>&, const VideoTensor<float>&,
                                                          FrameReduction, const PairMatrixOptions&);
template SimilarityMatrix<double> video_pair_matrix<double>(const VideoTensor<double>&, const VideoTensor<double>&,
                                                            FrameReduction, const PairMatrixOptions&);

namespace ad {

template <typename S>
Var frame_similarity(GradTape<S>& t, Var q, Var p, FrameReduction how, const PairMatrixOptions& options) {
    const Tensor<S>& qv = t.value(q);
    const Tensor<S>& pv = t.value(p);
    check_pair<S>(qv.shape(), pv.shape());
    const Index fq = qv.dim(0), rq = qv.dim(1) * qv.dim(2);
    const Index fp = pv.dim(0), rp = pv.dim(1) * pv.dim(2);
    const Index channels = qv.dim(3);

    PairArgmax argmax;
    const bool differentiable = t.recording() && (t.requires_grad(q) || t.requires_grad(p));
    RowMatrix<S> s = pair_matrix(qv.data(), fq, rq, pv.data(), fp, rp, channels, how, options,
                                 differentiable ? &argmax : nullptr);
    Tensor<S> out(Shape{fq, fp});
    out.matrix(fq) = s;

    return t.record(std::move(out), {q, p},
                    [q, p, how, fq, rq, fp, rp, channels, argmax = std::move(argmax)](const Tensor<S>& g,
                                                                                      GradTape<S>& tape) {
                        const Tensor<S>& qv = tape.value(q);
                        const Tensor<S>& pv = tape.value(p);
                        Tensor<S>* dq = tape.requires_grad(q) ? &tape.grad_buffer(q) : nullptr;
                        Tensor<S>* dp = tape.requires_grad(p) ? &tape.grad_buffer(p) : nullptr;
                        auto q_row = [&](Index x, Index i) { return qv.data() + (x * rq + i) * channels; };
                        auto p_row = [&](Index y, Index j) { return pv.data() + (y * rp + j) * channels; };
                        auto axpy = [channels](Tensor<S>* dst, Index offset, double a, const S* src) {
                            S* d = dst->data() + offset;
                            for (Index c = 0; c < channels; ++c)
                                d[c] += static_cast<S>(a * static_cast<double>(src[c]));
                        };

                        if (how == FrameReduction::average) {
                            // every region pair contributes g / (rq * rp)
                            RowMatrix<double> q_sum = RowMatrix<double>::Zero(fq, channels);
                            RowMatrix<double> p_sum = RowMatrix<double>::Zero(fp, channels);
                            for (Index x = 0; x < fq; ++x)
                                for (Index i = 0; i < rq; ++i)
                                    q_sum.row(x) += Eigen::Map<const Vector<S>>(q_row(x, i), channels)
                                                        .template cast<double>()
                                                        .transpose();
                            for (Index y = 0; y < fp; ++y)
                                for (Index j = 0; j < rp; ++j)
                                    p_sum.row(y) += Eigen::Map<const Vector<S>>(p_row(y, j), channels)
                                                        .template cast<double>()
                                                        .transpose();
                            const RowMatrix<double> gs = g.matrix(fq).template cast<double>() / double(rq * rp);
                            if (dq) {
                                const RowMatrix<double> dqs = gs * p_sum;  // fq x C
                                for (Index x = 0; x < fq; ++x)
                                    for (Index i = 0; i < rq; ++i)
                                        for (Index c = 0; c < channels; ++c)
                                            (*dq)[(x * rq + i) * channels + c] += static_cast<S>(dqs(x, c));
                            }
                            if (dp) {
                                const RowMatrix<double> dps = gs.transpose() * q_sum;  // fp x C
                                for (Index y = 0; y < fp; ++y)
                                    for (Index j = 0; j < rp; ++j)
                                        for (Index c = 0; c < channels; ++c)
                                            (*dp)[(y * rp + j) * channels + c] += static_cast<S>(dps(y, c));
                            }
                            return;
                        }

                        const double forward_share = how == FrameReduction::symmetric_chamfer ? 0.5 : 1.0;
                        for (Index x = 0; x < fq; ++x)
                            for (Index y = 0; y < fp; ++y) {
                                const double gxy = static_cast<double>(g.at(x, y));
                                if (gxy == 0.0) continue;
                                const double a = forward_share * gxy / static_cast<double>(rq);
                                for (Index i = 0; i < rq; ++i) {
                                    const Index j = argmax.rows[static_cast<std::size_t>((x * rq + i) * fp + y)];
                                    if (dq) axpy(dq, (x * rq + i) * channels, a, p_row(y, j));
                                    if (dp) axpy(dp, (y * rp + j) * channels, a, q_row(x, i));
                                }
                                if (how == FrameReduction::symmetric_chamfer) {
                                    const double b = 0.5 * gxy / static_cast<double>(rp);
                                    for (Index j = 0; j < rp; ++j) {
                                        const Index i = argmax.cols[static_cast<std::size_t>((x * fp + y) * rp + j)];
                                        if (dq) axpy(dq, (x * rq + i) * channels, b, p_row(y, j));
                                        if (dp) axpy(dp, (y * rp + j) * channels, b, q_row(x, i));
                                    }
                                }
                            }
                    });
}

template Var frame_similarity<float>(GradTape<float>&, Var, Var, FrameReduction, const PairMatrixOptions&);
template Var frame_similarity<double>(GradTape<double>&, Var, Var, FrameReduction, const PairMatrixOptions&);

}  // namespace ad

}  // namespace visil
