#include "visil/synthetic.hpp"

#include <algorithm>
#include <numeric>

namespace visil::synth {

World::World(WorldOptions options, std::uint64_t seed) : options_(options), rng_(seed) {
    if (options_.topic_channels > options_.channels || options_.active_per_region > options_.topic_channels ||
        options_.active_per_region < 1 || options_.grid < 1)
        throw InvalidArgument("inconsistent synthetic world options");
}

Index World::uniform(Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng_);
}

VideoTensorf World::scene(std::string id, Index frames) {
    const Index c = options_.channels, regions = options_.grid * options_.grid;
    std::vector<Index> all(static_cast<std::size_t>(c));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng_);
    const std::vector<Index> topic(all.begin(), all.begin() + options_.topic_channels);

    Tensorf out(Shape{frames, options_.grid, options_.grid, c});
    std::uniform_real_distribution<float> weight(0.5f, 1.0f);
    std::vector<Index> pool = topic;
    for (Index r = 0; r < frames * regions; ++r) {
        std::shuffle(pool.begin(), pool.end(), rng_);
        float* region = out.data() + r * c;
        for (Index k = 0; k < options_.active_per_region; ++k) region[pool[static_cast<std::size_t>(k)]] = weight(rng_);
    }
    auto rows = out.matrix(frames * regions);
    normalize_rows(rows);
    return VideoTensorf(std::move(id), std::move(out));
}

VideoTensorf World::noisy_copy(const VideoTensorf& video, std::string id) {
    const Index c = video.channels();
    const Index rows = video.frames() * video.regions_per_frame();
    std::vector<Index> vocabulary;
    const auto m = video.region_matrix();
    for (Index k = 0; k < c; ++k)
        if ((m.col(k).array() > 0.0f).any()) vocabulary.push_back(k);
    if (vocabulary.empty()) throw InvalidArgument("cannot perturb an all-zero video");

    Tensorf out = video.tensor();
    const float sigma = static_cast<float>(options_.copy_noise);
    std::uniform_real_distribution<float> jitter(-1.0f, 1.0f), extra(0.0f, 1.0f);
    for (Index r = 0; r < rows; ++r) {
        float* region = out.data() + r * c;
        for (Index k = 0; k < c; ++k)
            if (region[k] > 0.0f) region[k] *= 1.0f + sigma * jitter(rng_);
        region[vocabulary[static_cast<std::size_t>(uniform(0, Index(vocabulary.size()) - 1))]] += sigma * extra(rng_);
    }
    auto mat = out.matrix(rows);
    normalize_rows(mat);
    return VideoTensorf(std::move(id), std::move(out));
}

VideoTensorf World::pick(const VideoTensorf& video, const std::vector<Index>& picks, std::string id) {
    if (picks.empty()) throw InvalidArgument("cannot pick zero frames");
    const Index per = video.regions_per_frame() * video.channels();
    Tensorf out(Shape{Index(picks.size()), video.grid(), video.grid(), video.channels()});
    float* dst = out.data();
    for (Index f : picks) {
        if (f < 0 || f >= video.frames()) throw InvalidArgument("picked frame out of range");
        dst = std::copy(video.tensor().data() + f * per, video.tensor().data() + (f + 1) * per, dst);
    }
    return VideoTensorf(std::move(id), std::move(out));
}

VideoTensorf World::concat(const std::vector<VideoTensorf>& parts, std::string id) {
    if (parts.empty()) throw InvalidArgument("nothing to concatenate");
    Index frames = 0;
    for (const auto& p : parts) frames += p.frames();
    const auto& first = parts.front();
    Tensorf out(Shape{frames, first.grid(), first.grid(), first.channels()});
    float* dst = out.data();
    for (const auto& p : parts) {
        if (p.grid() != first.grid() || p.channels() != first.channels()) throw ShapeError("parts must share layout");
        dst = std::copy(p.tensor().data(), p.tensor().data() + p.tensor().size(), dst);
    }
    return VideoTensorf(std::move(id), std::move(out));
}

namespace {

std::string name(const std::string& prefix, Index i, Index j = -1) {
    std::string s = prefix + std::to_string(1000 + i).substr(1);
    if (j >= 0) s += "_" + std::to_string(j);
    return s;
}

void check_budget(const SplitOptions& split, Index used) {
    if (used > split.videos) throw InvalidArgument("split options need more videos than the corpus size");
}

// Positive with one contiguous, noisy copy of `length` query frames.
VideoTensorf partial_copy(World& world, const VideoTensorf& query, Index length, const std::string& id,
                          Interval* query_span = nullptr, Interval* copy_span = nullptr) {
    const Index start = world.uniform(0, query.frames() - length);
    std::vector<Index> chunk(static_cast<std::size_t>(length));
    std::iota(chunk.begin(), chunk.end(), start);
    const Index before = world.uniform(length / 2, length + 2), after = world.uniform(length / 2, length + 2);
    const VideoTensorf filler = world.scene(id + "_fill", before + after);
    std::vector<Index> head(static_cast<std::size_t>(before)), tail(static_cast<std::size_t>(after));
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), before);
    if (query_span) *query_span = {double(start), double(start + length)};
    if (copy_span) *copy_span = {double(before), double(before + length)};
    return World::concat({World::pick(filler, head, id), world.noisy_copy(World::pick(query, chunk, id), id),
                          World::pick(filler, tail, id)},
                         id);
}

// Negative with `count` query frames in shuffled order, each followed by
// foreign frames.
VideoTensorf scattered_copy(World& world, const VideoTensorf& query, Index count, Index filler_per_frame,
                            const std::string& id) {
    std::vector<Index> order(static_cast<std::size_t>(query.frames()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), world.rng());
    order.resize(static_cast<std::size_t>(count));
    // break up pairs that would stay consecutive
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i] == order[i - 1] + 1) std::swap(order[i], order[(i + 1) % order.size()]);
    const VideoTensorf copies = world.noisy_copy(World::pick(query, order, id), id);
    const VideoTensorf filler = world.scene(id + "_fill", count * filler_per_frame);
    std::vector<VideoTensorf> parts;
    for (Index i = 0; i < count; ++i) {
        parts.push_back(copies.slice(i, 1));
        parts.push_back(filler.slice(i * filler_per_frame, filler_per_frame));
    }
    return World::concat(parts, id);
}

}  // namespace

RetrievalSplit near_duplicate_split(const WorldOptions& options, const SplitOptions& split, std::uint64_t seed) {
    World world(options, seed);
    check_budget(split, split.queries * (1 + split.positives_per_query));
    RetrievalSplit out;
    for (Index q = 0; q < split.queries; ++q) {
        VideoTensorf query = world.scene(name("q", q), split.query_frames);
        std::set<std::string> relevant;
        for (Index p = 0; p < split.positives_per_query; ++p) {
            const std::string id = name("q", q, p);
            const VideoTensorf donor = world.scene(id + "_donor", 8);
            VideoTensorf copy = world.noisy_copy(query, id);
            copy = apply_temporal(copy, static_cast<TemporalTransform>(world.uniform(0, 4)), world.rng(), &donor);
            // one or two foreign segments spliced in
            std::vector<VideoTensorf> parts;
            Index cursor = 0;
            const Index cuts = world.uniform(1, 2);
            for (Index s = 0; s < cuts; ++s) {
                const Index at = world.uniform(cursor, copy.frames() - 1);
                if (at > cursor) parts.push_back(copy.slice(cursor, at - cursor));
                parts.push_back(world.scene(id + "_seg", world.uniform(3, 6)));
                cursor = at;
            }
            parts.push_back(copy.slice(cursor, copy.frames() - cursor));
            out.corpus.push_back(World::concat(parts, id));
            relevant.insert(id);
        }
        out.corpus.push_back(query);
        out.queries.push_back(std::move(query));
        out.relevant.push_back(std::move(relevant));
    }
    for (Index d = Index(out.corpus.size()); d < split.videos; ++d)
        out.corpus.push_back(world.scene(name("d", d), world.uniform(split.query_frames / 2, split.query_frames * 2)));
    return out;
}

RetrievalSplit hard_split(const WorldOptions& options, const SplitOptions& split, std::uint64_t seed) {
    World world(options, seed);
    check_budget(split, split.queries * (1 + split.positives_per_query + split.hard_negatives_per_query));
    RetrievalSplit out;
    for (Index q = 0; q < split.queries; ++q) {
        VideoTensorf query = world.scene(name("q", q), split.query_frames);
        std::set<std::string> relevant;
        for (Index p = 0; p < split.positives_per_query; ++p) {
            const std::string id = name("q", q, p);
            out.corpus.push_back(partial_copy(world, query, split.copied_frames, id));
            relevant.insert(id);
        }
        for (Index n = 0; n < split.hard_negatives_per_query; ++n)
            out.corpus.push_back(
                scattered_copy(world, query, split.scattered_frames, split.filler_per_frame, name("n", q, n)));
        out.corpus.push_back(query);
        out.queries.push_back(std::move(query));
        out.relevant.push_back(std::move(relevant));
    }
    for (Index d = Index(out.corpus.size()); d < split.videos; ++d)
        out.corpus.push_back(world.scene(name("d", d), world.uniform(split.query_frames / 2, split.query_frames * 2)));
    return out;
}

TrainingSet hard_training_set(const WorldOptions& options, const SplitOptions& split, Index anchors, Index distractors,
                              std::uint64_t seed) {
    World world(options, seed);
    TrainingSet set;
    for (Index a = 0; a < anchors; ++a) {
        const VideoTensorf anchor = world.scene(name("a", a), split.query_frames);
        const Index anchor_index = Index(set.videos.size());
        set.videos.push_back(anchor);
        for (Index p = 0; p < split.positives_per_query; ++p) {
            AnnotatedPair pair;
            pair.anchor = anchor_index;
            pair.positive = Index(set.videos.size());
            set.videos.push_back(
                partial_copy(world, anchor, split.copied_frames, name("a", a, p), &pair.anchor_segment, &pair.positive_segment));
            set.pairs.push_back(pair);
        }
        for (Index n = 0; n < split.hard_negatives_per_query; ++n)
            set.videos.push_back(
                scattered_copy(world, anchor, split.scattered_frames, split.filler_per_frame, name("s", a, n)));
    }
    for (Index d = 0; d < distractors; ++d)
        set.videos.push_back(world.scene(name("u", d), world.uniform(split.query_frames / 2, split.query_frames * 2)));
    return set;
}

ValidationSet as_validation(const RetrievalSplit& split) {
    return {split.queries, split.corpus, split.relevant};
}

std::vector<Tripletf> fixed_triplets(const WorldOptions& options, Index count, Index frames, std::uint64_t seed) {
    World world(options, seed);
    std::vector<Tripletf> out;
    for (Index i = 0; i < count; ++i) {
        Tripletf t;
        t.anchor = world.scene(name("t", i), frames);
        t.positive = world.noisy_copy(t.anchor, name("t", i, 0));
        if (i % 2 == 1) t.positive = apply_temporal(t.positive, TemporalTransform::slow_motion, world.rng());
        t.negative = scattered_copy(world, t.anchor, frames / 2, 1, name("t", i, 1));
        t.anchor_overlap = {0.0, double(frames)};
        t.positive_overlap = {0.0, double(t.positive.frames())};
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<FeatureMapStack> raw_stacks(Index frames, const std::vector<std::array<Index, 3>>& layers, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    std::vector<FeatureMapStack> out(static_cast<std::size_t>(frames));
    for (Index f = 0; f < frames; ++f) {
        auto& s = out[static_cast<std::size_t>(f)];
        s.timestamp = double(f);
        for (const auto& l : layers) {
            Tensorf t(Shape{l[0], l[1], l[2]});
            for (auto& v : t.values()) v = dist(rng);
            s.layers.push_back(std::move(t));
        }
    }
    return out;
}

}  // namespace visil::synth
