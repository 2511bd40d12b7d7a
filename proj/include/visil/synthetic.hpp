#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "visil/training.hpp"

namespace visil::synth {

/// Region vectors are sparse and non-negative, like rectified activations.
/// Every scene draws its regions from its own small set of channels, so
/// unrelated scenes are nearly orthogonal while frames of one scene share a
/// vocabulary.
struct WorldOptions {
    Index channels = 512;
    Index grid = 2;
    Index topic_channels = 16;
    Index active_per_region = 2;
    double copy_noise = 0.15;
};

class World {
public:
    World(WorldOptions options, std::uint64_t seed);

    const WorldOptions& options() const { return options_; }
    std::mt19937_64& rng() { return rng_; }

    /// Fresh scene with a new channel vocabulary.
    VideoTensorf scene(std::string id, Index frames);
    /// Frame-wise perturbed copy; the perturbation stays in each region's
    /// own support plus its scene vocabulary.
    VideoTensorf noisy_copy(const VideoTensorf& video, std::string id);
    /// Frames `picks` of `video` in the given order.
    static VideoTensorf pick(const VideoTensorf& video, const std::vector<Index>& picks, std::string id);
    static VideoTensorf concat(const std::vector<VideoTensorf>& parts, std::string id);
    Index uniform(Index lo, Index hi);  // inclusive

private:
    WorldOptions options_;
    std::mt19937_64 rng_;
};

struct RetrievalSplit {
    std::vector<VideoTensorf> queries;
    std::vector<VideoTensorf> corpus;  // includes the queries
    std::vector<std::set<std::string>> relevant;
};

struct SplitOptions {
    Index videos = 200;
    Index queries = 20;
    Index positives_per_query = 3;
    Index hard_negatives_per_query = 3;  // hard split only
    Index query_frames = 24;
    Index copied_frames = 8;     // hard split: contiguous chunk in each positive
    Index scattered_frames = 14;  // hard split: query frames spread in each negative
    Index filler_per_frame = 2;   // hard split: foreign frames after each scattered frame
};

/// Positives are temporally transformed noisy copies of the query with
/// foreign segments spliced in; the rest are unrelated scenes.
RetrievalSplit near_duplicate_split(const WorldOptions& world, const SplitOptions& split, std::uint64_t seed);

/// Positives hold one short contiguous copy of the query among foreign
/// frames. Hard negatives hold more query frames, but shuffled and spread
/// out, so frame-level evidence favours them while only positives align
/// in time.
RetrievalSplit hard_split(const WorldOptions& world, const SplitOptions& split, std::uint64_t seed);

/// Hard-split style training material: each anchor has one annotated
/// positive and its scattered negatives, plus unrelated scenes.
TrainingSet hard_training_set(const WorldOptions& world, const SplitOptions& split, Index anchors, Index distractors,
                              std::uint64_t seed);

ValidationSet as_validation(const RetrievalSplit& split);

/// Anchor, noisy transformed copy, and a same-vocabulary negative.
std::vector<Tripletf> fixed_triplets(const WorldOptions& world, Index count, Index frames, std::uint64_t seed);

/// Uniform non-negative raw activation stacks with the given per-layer
/// (H, W, C) shapes.
std::vector<FeatureMapStack> raw_stacks(Index frames, const std::vector<std::array<Index, 3>>& layers,
                                        std::uint64_t seed);

}  // namespace visil::synth
