#include "visil/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <iomanip>
#include <ostream>

namespace visil {

void TrainingConfig::validate() const {
    if (!(margin > 0.0)) throw InvalidArgument("margin must be positive");
    if (!(regularization >= 0.0)) throw InvalidArgument("regularization weight must be non-negative");
    if (snippet_frames < kMinCnnExtent) throw InvalidArgument("snippet length must be at least 4 frames");
    if (triplets_per_pool < 1) throw InvalidArgument("triplets per pool must be at least 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
}

ScoringOptions TrainingConfig::scoring() const {
    ScoringOptions options;
    options.variant = Variant::visil_v;
    options.frame_mode = frame_mode;
    options.video_mode = video_mode;
    return options;
}

double Interval::overlap(const Interval& other) const {
    return std::max(0.0, std::min(end, other.end) - std::max(start, other.start));
}

double triplet_loss(double sim_positive, double sim_negative, double margin) {
    return std::max(0.0, sim_negative - sim_positive + margin);
}

template <typename Scalar>
double regularization_loss(const SimilarityMatrix<Scalar>& s_v_raw) {
    double total = 0.0;
    for (Index i = 0; i < s_v_raw.rows(); ++i)
        for (Index j = 0; j < s_v_raw.cols(); ++j) {
            const double v = static_cast<double>(s_v_raw.values(i, j));
            total += std::max(0.0, v - 1.0) + std::max(0.0, -1.0 - v);
        }
    return total;
}

template <typename Scalar>
LossEvaluation<Scalar> total_loss(const Triplet<Scalar>& triplet, const ModelParams<Scalar>& params,
                                  const TrainingConfig& config, bool with_gradients) {
    GradTape<Scalar> tape(with_gradients);
    const ModelVars vars = place_params(tape, params, true);
    const ScoringOptions options = config.scoring();
    const Var anchor = tape.constant(triplet.anchor.tensor());
    const PairGraph pos = pair_graph(tape, anchor, tape.constant(triplet.positive.tensor()), vars, options);
    const PairGraph neg = pair_graph(tape, anchor, tape.constant(triplet.negative.tensor()), vars, options);

    const Var margin = tape.constant(Tensor<Scalar>::scalar(static_cast<Scalar>(config.margin)));
    const Var hinge = ad::relu(tape, ad::add(tape, ad::sub(tape, neg.score, pos.score), margin));
    const Var reg = ad::add(tape, ad::saturation_penalty(tape, *pos.s_v), ad::saturation_penalty(tape, *neg.s_v));
    const Var total = ad::add(tape, hinge, ad::scale(tape, reg, config.regularization));

    LossEvaluation<Scalar> out;
    out.triplet = static_cast<double>(tape.value(hinge)[0]);
    out.regularization = static_cast<double>(tape.value(reg)[0]);
    out.total = static_cast<double>(tape.value(total)[0]);
    out.positive_score = static_cast<double>(tape.value(pos.score)[0]);
    out.negative_score = static_cast<double>(tape.value(neg.score)[0]);
    if (with_gradients) out.gradients = tape.backward(total);
    return out;
}

template <typename Scalar>
void adam_update(std::span<const std::pair<std::string, Tensor<Scalar>*>> params,
                 const std::map<std::string, Tensor<Scalar>>& grads, AdamState<Scalar>& state, double learning_rate) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(kAdamBeta1, t);
    const double correction2 = 1.0 - std::pow(kAdamBeta2, t);
    for (const auto& [name, tensor] : params) {
        auto& m = state.first_moment.try_emplace(name, tensor->shape()).first->second;
        auto& v = state.second_moment.try_emplace(name, tensor->shape()).first->second;
        require_same_shape(m.shape(), tensor->shape(), "adam moment");
        const auto g = grads.find(name);
        if (g != grads.end()) require_same_shape(g->second.shape(), tensor->shape(), "adam gradient");
        for (Index i = 0; i < tensor->size(); ++i) {
            const double gi = g == grads.end() ? 0.0 : static_cast<double>(g->second[i]);
            const double mi = kAdamBeta1 * static_cast<double>(m[i]) + (1.0 - kAdamBeta1) * gi;
            const double vi = kAdamBeta2 * static_cast<double>(v[i]) + (1.0 - kAdamBeta2) * gi * gi;
            m[i] = static_cast<Scalar>(mi);
            v[i] = static_cast<Scalar>(vi);
            const double update = learning_rate * (mi / correction1) / (std::sqrt(vi / correction2) + kAdamEpsilon);
            (*tensor)[i] = static_cast<Scalar>(static_cast<double>((*tensor)[i]) - update);
        }
    }
}

template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               AdamState<Scalar>& state, double learning_rate) {
    const auto named = params.trainable();
    adam_update<Scalar>(named, grads, state, learning_rate);
    if (params.attention) {
        auto& u = *params.attention;
        const double norm = u.flat().template cast<double>().norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) throw DivergenceError("attention context collapsed");
        u.flat() = (u.flat().template cast<double>() / norm).template cast<Scalar>();
    }
}

Snippet sample_snippet(const VideoTensorf& video, Index frames, const std::optional<Interval>& overlap,
                       double min_overlap, std::mt19937_64& rng) {
    if (frames < kMinCnnExtent) throw InvalidArgument("snippet length must be at least 4 frames");
    auto kept = [&](Index start) {
        const Interval window{double(start), double(start + std::min(frames, video.frames()))};
        return !overlap || window.overlap(*overlap) >= min_overlap;
    };
    if (video.frames() <= frames) {
        if (!kept(0)) throw InvalidArgument("overlap constraint cannot be satisfied by video '" + video.id() + "'");
        return {video, 0};
    }
    std::vector<Index> starts;
    for (Index s = 0; s + frames <= video.frames(); ++s)
        if (kept(s)) starts.push_back(s);
    if (starts.empty())
        throw InvalidArgument("no " + std::to_string(frames) + "-frame window of '" + video.id() +
                              "' keeps the required overlap");
    std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
    const Index start = starts[pick(rng)];
    return {video.slice(start, frames), start};
}

namespace {

Index uniform_index(std::mt19937_64& rng, Index n) {
    return static_cast<Index>(std::uniform_int_distribution<std::uint64_t>(0, static_cast<std::uint64_t>(n - 1))(rng));
}

VideoTensorf from_frame_list(const VideoTensorf& video, const std::vector<const float*>& frames) {
    const Index per = video.regions_per_frame() * video.channels();
    Tensorf out(Shape{static_cast<Index>(frames.size()), video.grid(), video.grid(), video.channels()});
    float* dst = out.data();
    for (const float* f : frames) dst = std::copy(f, f + per, dst);
    return VideoTensorf(video.id(), std::move(out));
}

VideoTensorf random_frames(const VideoTensorf& like, Index count, std::mt19937_64& rng) {
    Tensorf out(Shape{count, like.grid(), like.grid(), like.channels()});
    std::normal_distribution<float> dist;
    for (auto& v : out.values()) v = dist(rng);
    auto rows = out.matrix(count * like.regions_per_frame());
    normalize_rows(rows);
    return VideoTensorf("noise", std::move(out));
}

}  // namespace

VideoTensorf apply_temporal(const VideoTensorf& video, TemporalTransform op, std::mt19937_64& rng,
                            const VideoTensorf* donor) {
    if (video.frames() < 1) throw InvalidArgument("cannot transform an empty video");
    const Index x = video.frames();
    const Index per = video.regions_per_frame() * video.channels();
    auto frame_ptr = [&](const VideoTensorf& v, Index i) { return v.tensor().data() + i * per; };
    std::vector<const float*> frames;
    switch (op) {
        case TemporalTransform::slow_motion:
            for (Index i = 0; i < x; ++i) frames.insert(frames.end(), 2, frame_ptr(video, i));
            break;
        case TemporalTransform::fast_forward:
            for (Index i = 0; i < x; i += 2) frames.push_back(frame_ptr(video, i));
            break;
        case TemporalTransform::reversal:
            for (Index i = x - 1; i >= 0; --i) frames.push_back(frame_ptr(video, i));
            break;
        case TemporalTransform::pause: {
            const Index at = uniform_index(rng, x);
            const Index run = 1 + uniform_index(rng, std::max<Index>(x / 4, 1));
            for (Index i = 0; i < x; ++i) {
                frames.push_back(frame_ptr(video, i));
                if (i == at) frames.insert(frames.end(), static_cast<std::size_t>(run), frame_ptr(video, i));
            }
            break;
        }
        case TemporalTransform::frame_insertion: {
            const Index count = std::max<Index>(x / 8, 1);
            VideoTensorf noise;
            const VideoTensorf* source = donor;
            if (!source || source->channels() != video.channels() || source->grid() != video.grid()) {
                noise = random_frames(video, count, rng);
                source = &noise;
            }
            std::vector<Index> positions;
            for (Index k = 0; k < count; ++k) positions.push_back(uniform_index(rng, x + 1));
            std::sort(positions.begin(), positions.end());
            std::size_t next = 0;
            for (Index i = 0; i <= x; ++i) {
                while (next < positions.size() && positions[next] == i) {
                    frames.push_back(frame_ptr(*source, uniform_index(rng, source->frames())));
                    ++next;
                }
                if (i < x) frames.push_back(frame_ptr(video, i));
            }
            return from_frame_list(video, frames);
        }
    }
    return from_frame_list(video, frames);
}

VideoTensorf apply_geometric(const VideoTensorf& video, GeometricTransform op, std::mt19937_64& rng) {
    const Index n = video.grid(), c = video.channels(), x = video.frames();
    Tensorf out(video.tensor().shape());
    const Tensorf& in = video.tensor();
    auto region = [&](auto& t, Index f, Index i, Index j) { return t.data() + t.offset(f, i, j, 0); };

    // Each output region is the channel-wise max over a set of source regions.
    auto resample = [&](auto&& sources) {
        for (Index f = 0; f < x; ++f)
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j) {
                    float* dst = region(out, f, i, j);
                    std::fill(dst, dst + c, -std::numeric_limits<float>::infinity());
                    for (auto [si, sj] : sources(i, j)) {
                        const float* src = region(in, f, si, sj);
                        for (Index k = 0; k < c; ++k) dst[k] = std::max(dst[k], src[k]);
                    }
                }
    };
    using Cells = std::vector<std::pair<Index, Index>>;
    switch (op) {
        case GeometricTransform::horizontal_flip:
            resample([&](Index i, Index j) { return Cells{{i, n - 1 - j}}; });
            return VideoTensorf(video.id(), std::move(out));
        case GeometricTransform::vertical_flip:
            resample([&](Index i, Index j) { return Cells{{n - 1 - i, j}}; });
            return VideoTensorf(video.id(), std::move(out));
        case GeometricTransform::crop: {
            if (n == 1) return video;
            const Index m = n - 1;
            const Index oy = uniform_index(rng, 2), ox = uniform_index(rng, 2);
            // nearest source cell of the (n-1) x (n-1) sub-grid
            resample([&](Index i, Index j) {
                return Cells{{oy + (2 * i + 1) * m / (2 * n), ox + (2 * j + 1) * m / (2 * n)}};
            });
            break;
        }
        case GeometricTransform::rescale:
            resample([&](Index i, Index j) {
                Cells cells;
                for (Index di = 0; di < 2; ++di)
                    for (Index dj = 0; dj < 2; ++dj) cells.emplace_back(std::min(i + di, n - 1), std::min(j + dj, n - 1));
                return cells;
            });
            break;
    }
    auto rows = out.matrix(x * n * n);
    normalize_rows(rows);
    return VideoTensorf(video.id(), std::move(out));
}

VideoTensorf transform_video(const VideoTensorf& video, TransformKind kind, std::uint64_t seed,
                             const VideoTensorf* donor) {
    std::mt19937_64 rng(seed);
    if (kind == TransformKind::temporal)
        return apply_temporal(video, static_cast<TemporalTransform>(uniform_index(rng, 5)), rng, donor);
    return apply_geometric(video, static_cast<GeometricTransform>(uniform_index(rng, 4)), rng);
}

Vector<float> coarse_descriptor(const VideoTensorf& video) {
    Vector<double> total = Vector<double>::Zero(video.channels());
    const auto rows = video.region_matrix();
    const Index per = video.regions_per_frame();
    for (Index f = 0; f < video.frames(); ++f) {
        Vector<double> frame = rows.block(f * per, 0, per, video.channels()).colwise().maxCoeff().transpose().cast<double>();
        const double norm = frame.norm();
        if (norm > 0.0) total += frame / norm;
    }
    const double norm = total.norm();
    if (norm > 0.0) total /= norm;
    return total.cast<float>();
}

double coarse_similarity(const VideoTensorf& a, const VideoTensorf& b) {
    const Vector<float> da = coarse_descriptor(a), db = coarse_descriptor(b);
    if (da.size() != db.size()) throw ShapeError("coarse similarity: channel mismatch");
    return dot_accumulate(da.data(), db.data(), da.size());
}

bool TripletPool::usable() const {
    return std::any_of(entries.begin(), entries.end(),
                       [](const PoolEntry& e) { return !e.hard_negatives.empty() || !e.negatives.empty(); });
}

namespace {

VideoTensorf segment_of(const VideoTensorf& video, const Interval& segment) {
    const Index first = std::clamp<Index>(static_cast<Index>(std::floor(segment.start)), 0, video.frames() - 1);
    const Index last = std::clamp<Index>(static_cast<Index>(std::ceil(segment.end)), first + 1, video.frames());
    return video.slice(first, last - first);
}

}  // namespace

std::array<TripletPool, 2> build_pools(const TrainingSet& set, const TrainingConfig& config,
                                       const CoarseEmbedding& embed) {
    const Index count = static_cast<Index>(set.videos.size());
    std::vector<Vector<float>> embedding;
    embedding.reserve(set.videos.size());
    for (const auto& v : set.videos) embedding.push_back(embed(v));
    auto sim = [](const Vector<float>& a, const Vector<float>& b) { return dot_accumulate(a.data(), b.data(), a.size()); };

    std::vector<std::set<Index>> related(set.videos.size());
    for (const auto& pair : set.pairs) {
        if (pair.anchor < 0 || pair.anchor >= count || pair.positive < 0 || pair.positive >= count)
            throw InvalidArgument("annotated pair references an unknown video");
        related[static_cast<std::size_t>(pair.anchor)].insert(pair.positive);
        related[static_cast<std::size_t>(pair.positive)].insert(pair.anchor);
    }
    auto is_related = [&](Index a, Index b) { return related[static_cast<std::size_t>(a)].count(b) > 0; };
    const double cap = config.near_duplicate_threshold;

    std::array<TripletPool, 2> pools;
    pools[0].kind = PoolKind::annotated;
    for (const auto& pair : set.pairs) {
        if (pair.anchor_segment.length() < config.min_overlap_seconds ||
            pair.positive_segment.length() < config.min_overlap_seconds)
            continue;
        const auto& a = set.videos[static_cast<std::size_t>(pair.anchor)];
        const auto& p = set.videos[static_cast<std::size_t>(pair.positive)];
        const Vector<float> seg_a = embed(segment_of(a, pair.anchor_segment));
        const Vector<float> seg_p = embed(segment_of(p, pair.positive_segment));
        PoolEntry entry;
        entry.anchor = pair.anchor;
        entry.positive = pair.positive;
        entry.anchor_overlap = pair.anchor_segment;
        entry.positive_overlap = pair.positive_segment;
        entry.segment_similarity = sim(seg_a, seg_p);
        for (Index v = 0; v < count; ++v) {
            if (v == pair.anchor || v == pair.positive || is_related(v, pair.anchor) || is_related(v, pair.positive))
                continue;
            const auto& ev = embedding[static_cast<std::size_t>(v)];
            const double to_seg_a = sim(ev, seg_a), to_seg_p = sim(ev, seg_p);
            const double to_a = sim(ev, embedding[static_cast<std::size_t>(pair.anchor)]);
            const double to_p = sim(ev, embedding[static_cast<std::size_t>(pair.positive)]);
            if (std::max({to_seg_a, to_seg_p, to_a, to_p}) > cap) continue;
            entry.negatives.push_back(v);
            if (to_seg_a > entry.segment_similarity || to_seg_p > entry.segment_similarity)
                entry.hard_negatives.push_back(v);
        }
        pools[0].entries.push_back(std::move(entry));
    }

    pools[1].kind = PoolKind::artificial;
    for (Index a = 0; a < count; ++a) {
        PoolEntry entry;
        entry.anchor = a;
        const auto& video = set.videos[static_cast<std::size_t>(a)];
        entry.anchor_overlap = entry.positive_overlap = Interval{0.0, double(video.frames())};
        entry.segment_similarity = 1.0;
        for (Index v = 0; v < count; ++v) {
            if (v == a || is_related(v, a)) continue;
            const double s = sim(embedding[static_cast<std::size_t>(v)], embedding[static_cast<std::size_t>(a)]);
            if (s > cap) continue;
            entry.negatives.push_back(v);
            if (s > config.artificial_negative_threshold) entry.hard_negatives.push_back(v);
        }
        pools[1].entries.push_back(std::move(entry));
    }
    if (pools[0].entries.empty() && pools[1].entries.empty()) throw InvalidArgument("no positive pair qualifies for training");
    return pools;
}

Tripletf sample_triplet(const TrainingSet& set, const TripletPool& pool, const TrainingConfig& config,
                        std::mt19937_64& rng) {
    std::vector<const PoolEntry*> usable;
    for (const auto& e : pool.entries)
        if (!e.hard_negatives.empty() || !e.negatives.empty()) usable.push_back(&e);
    if (usable.empty()) throw InvalidArgument("triplet pool has no entry with a negative");
    const PoolEntry& e = *usable[static_cast<std::size_t>(uniform_index(rng, static_cast<Index>(usable.size())))];
    const auto& candidates = e.hard_negatives.empty() ? e.negatives : e.hard_negatives;
    const Index negative = candidates[static_cast<std::size_t>(uniform_index(rng, static_cast<Index>(candidates.size())))];

    const auto& anchor = set.videos[static_cast<std::size_t>(e.anchor)];
    const auto& neg_video = set.videos[static_cast<std::size_t>(negative)];
    const Index w = config.snippet_frames;
    Tripletf t;
    const Snippet a = sample_snippet(anchor, w, e.anchor_overlap, config.min_overlap_seconds, rng);
    t.anchor = a.video;
    t.anchor_overlap = {e.anchor_overlap.start - double(a.first_frame), e.anchor_overlap.end - double(a.first_frame)};
    if (e.positive) {
        const auto& positive = set.videos[static_cast<std::size_t>(*e.positive)];
        const Snippet p = sample_snippet(positive, w, e.positive_overlap, config.min_overlap_seconds, rng);
        t.positive = p.video;
        t.positive_overlap = {e.positive_overlap.start - double(p.first_frame),
                              e.positive_overlap.end - double(p.first_frame)};
    } else {
        const std::uint64_t seed = rng();
        VideoTensorf moved = transform_video(a.video, TransformKind::geometric, seed);
        moved = transform_video(moved, TransformKind::temporal, seed + 1, &neg_video);
        t.positive = sample_snippet(moved, w, std::nullopt, 0.0, rng).video;
        t.positive_overlap = {0.0, double(t.positive.frames())};
    }
    t.negative = sample_snippet(neg_video, w, std::nullopt, 0.0, rng).video;
    return t;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

TrainResult train(const TrainingConfig& config, const TrainingSet& set, std::span<const TripletPool> pools,
                  const ValidationSet* validation, TrainState state, const TrainOptions& options) {
    config.validate();
    std::vector<const TripletPool*> usable;
    for (const auto& p : pools)
        if (p.usable()) usable.push_back(&p);

    TrainResult result;
    const auto pool_count = static_cast<std::uint64_t>(usable.size());
    const std::uint64_t per_epoch = static_cast<std::uint64_t>(config.triplets_per_pool) * pool_count;
    std::uint64_t end = per_epoch * static_cast<std::uint64_t>(config.epochs);
    if (options.max_steps) end = std::min(end, *options.max_steps);
    if (state.step < end && usable.empty()) throw InvalidArgument("no usable triplet pool to train on");

    for (std::uint64_t s = state.step; s < end; ++s) {
        std::mt19937_64 rng = step_rng(config.seed, s);
        const TripletPool& pool = *usable[static_cast<std::size_t>((s % per_epoch) % pool_count)];
        const Tripletf triplet = sample_triplet(set, pool, config, rng);
        const LossEvaluation<float> loss = total_loss(triplet, state.params, config, true);
        if (!std::isfinite(loss.total))
            throw DivergenceError("loss became non-finite at step " + std::to_string(s));
        adam_step(state.params, loss.gradients, state.adam, config.learning_rate);
        for (const auto& [name, tensor] : state.params.trainable())
            if (!tensor->all_finite()) throw DivergenceError("parameter " + name + " became non-finite");

        const HistoryRow row{s, loss.triplet, loss.regularization, loss.total};
        result.history.push_back(row);
        if (options.on_step) options.on_step(row);
        state.step = s + 1;

        if (validation && state.step % per_epoch == 0) {
            ScoringOptions scoring = config.scoring();
            const double map = evaluate(validation->queries, validation->corpus, validation->relevant, state.params,
                                        scoring, options.threads)
                                   .mean_average_precision;
            result.validation_map.push_back(map);
            if (map > state.best_map) {
                state.best_map = map;
                state.best = state.params;
            }
        }
        if (options.checkpoint_every && options.on_checkpoint && state.step % options.checkpoint_every == 0)
            options.on_checkpoint(state);
    }
    result.params = validation && state.best ? *state.best : state.params;
    result.state = std::move(state);
    return result;
}

TrainResult train_on_triplets(const TrainingConfig& config, std::span<const Tripletf> triplets, TrainState state,
                              const TrainOptions& options) {
    config.validate();
    TrainResult result;
    std::uint64_t end = static_cast<std::uint64_t>(triplets.size()) * static_cast<std::uint64_t>(config.epochs);
    if (options.max_steps) end = std::min(end, *options.max_steps);
    for (std::uint64_t s = state.step; s < end; ++s) {
        const LossEvaluation<float> loss = total_loss(triplets[s % triplets.size()], state.params, config, true);
        if (!std::isfinite(loss.total))
            throw DivergenceError("loss became non-finite at step " + std::to_string(s));
        adam_step(state.params, loss.gradients, state.adam, config.learning_rate);
        const HistoryRow row{s, loss.triplet, loss.regularization, loss.total};
        result.history.push_back(row);
        if (options.on_step) options.on_step(row);
        state.step = s + 1;
        if (options.checkpoint_every && options.on_checkpoint && state.step % options.checkpoint_every == 0)
            options.on_checkpoint(state);
    }
    result.params = state.params;
    result.state = std::move(state);
    return result;
}

void write_history_csv(std::ostream& out, std::span<const HistoryRow> history) {
    out << "step,triplet_loss,regularization_loss,total_loss\n";
    out << std::setprecision(17);
    for (const auto& r : history) out << r.step << ',' << r.triplet << ',' << r.regularization << ',' << r.total << '\n';
}

template double regularization_loss<float>(const SimilarityMatrix<float>&);
template double regularization_loss<double>(const SimilarityMatrix<double>&);
template LossEvaluation<float> total_loss<float>(const Triplet<float>&, const ModelParams<float>&, const TrainingConfig&, bool);
template LossEvaluation<double> total_loss<double>(const Triplet<double>&, const ModelParams<double>&, const TrainingConfig&, bool);
template void adam_update<float>(std::span<const std::pair<std::string, Tensor<float>*>>,
                                 const std::map<std::string, Tensor<float>>&, AdamState<float>&, double);
template void adam_update<double>(std::span<const std::pair<std::string, Tensor<double>*>>,
                                  const std::map<std::string, Tensor<double>>&, AdamState<double>&, double);
template void adam_step<float>(ModelParams<float>&, const std::map<std::string, Tensor<float>>&, AdamState<float>&, double);
template void adam_step<double>(ModelParams<double>&, const std::map<std::string, Tensor<double>>&, AdamState<double>&, double);

}  // namespace visil
