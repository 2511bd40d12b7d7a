#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "visil/evaluation.hpp"
#include "visil/model.hpp"

namespace visil {

struct TrainingConfig {
    double margin = 0.5;           // gamma
    double regularization = 0.1;   // r
    Index snippet_frames = 64;     // W
    Index triplets_per_pool = 1000;  // T
    double learning_rate = 1e-5;
    Index epochs = 100;
    std::uint64_t seed = 0;
    PoolingMode frame_mode = PoolingMode::mp_ap;
    PoolingMode video_mode = PoolingMode::mp_ap;
    double min_overlap_seconds = 5.0;
    double artificial_negative_threshold = 0.1;
    double near_duplicate_threshold = 0.5;

    void validate() const;
    ScoringOptions scoring() const;

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

/// Half-open time span in seconds; frames are sampled at one per second so
/// frame t covers [t, t + 1).
struct Interval {
    double start = 0.0;
    double end = 0.0;
    double length() const { return end - start; }
    double overlap(const Interval& other) const;
};

template <typename Scalar>
struct Triplet {
    VideoTensor<Scalar> anchor;
    VideoTensor<Scalar> positive;
    VideoTensor<Scalar> negative;
    Interval anchor_overlap;
    Interval positive_overlap;

    template <typename Other>
    Triplet<Other> cast() const {
        return {anchor.template cast<Other>(), positive.template cast<Other>(), negative.template cast<Other>(),
                anchor_overlap, positive_overlap};
    }
};
using Tripletf = Triplet<float>;

/// max(0, sim_neg - sim_pos + margin).
double triplet_loss(double sim_positive, double sim_negative, double margin);

/// Sum over entries outside [-1, 1] of the distance to the range.
template <typename Scalar>
double regularization_loss(const SimilarityMatrix<Scalar>& s_v_raw);

template <typename Scalar>
struct LossEvaluation {
    double triplet = 0.0;
    double regularization = 0.0;  // summed over both branches
    double total = 0.0;
    double positive_score = 0.0;
    double negative_score = 0.0;
    std::map<std::string, Tensor<Scalar>> gradients;  // empty unless requested
};

/// L = L_tr + r * L_reg for one triplet, with adjoints of every trainable
/// parameter when `with_gradients` is set.
template <typename Scalar>
LossEvaluation<Scalar> total_loss(const Triplet<Scalar>& triplet, const ModelParams<Scalar>& params,
                                  const TrainingConfig& config, bool with_gradients = true);

template <typename Scalar>
struct AdamState {
    std::map<std::string, Tensor<Scalar>> first_moment;
    std::map<std::string, Tensor<Scalar>> second_moment;
    std::uint64_t step = 0;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// One Adam update over named tensors. Missing gradients count as zero.
template <typename Scalar>
void adam_update(std::span<const std::pair<std::string, Tensor<Scalar>*>> params,
                 const std::map<std::string, Tensor<Scalar>>& grads, AdamState<Scalar>& state, double learning_rate);

/// Adam over the model's trainable tensors, then u is projected back to the
/// unit sphere.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               AdamState<Scalar>& state, double learning_rate);

struct Snippet {
    VideoTensorf video;
    Index first_frame = 0;
};

/// Contiguous window of `frames` frames (the whole video when shorter).
/// With `overlap`, the window keeps at least `min_overlap` seconds of it.
Snippet sample_snippet(const VideoTensorf& video, Index frames, const std::optional<Interval>& overlap,
                       double min_overlap, std::mt19937_64& rng);

enum class TransformKind { geometric, temporal };
enum class TemporalTransform { slow_motion, fast_forward, frame_insertion, pause, reversal };
enum class GeometricTransform { horizontal_flip, vertical_flip, crop, rescale };

/// Feature-level approximations of the artificial positive transformations.
/// `donor` supplies foreign frames for insertion; random unit frames are
/// used without one.
VideoTensorf apply_temporal(const VideoTensorf& video, TemporalTransform op, std::mt19937_64& rng,
                            const VideoTensorf* donor = nullptr);
VideoTensorf apply_geometric(const VideoTensorf& video, GeometricTransform op, std::mt19937_64& rng);
/// One transformation of the given kind, chosen uniformly by seed.
VideoTensorf transform_video(const VideoTensorf& video, TransformKind kind, std::uint64_t seed,
                             const VideoTensorf* donor = nullptr);

/// Whole-video descriptor for mining: mean over frames of the per-frame
/// channel-wise max over regions (iMAC-like), each l2-normalized.
Vector<float> coarse_descriptor(const VideoTensorf& video);
double coarse_similarity(const VideoTensorf& a, const VideoTensorf& b);
using CoarseEmbedding = std::function<Vector<float>(const VideoTensorf&)>;

struct AnnotatedPair {
    Index anchor = 0;
    Index positive = 0;
    Interval anchor_segment;
    Interval positive_segment;
};

struct TrainingSet {
    std::vector<VideoTensorf> videos;
    std::vector<AnnotatedPair> pairs;
};

enum class PoolKind { annotated, artificial };

struct PoolEntry {
    Index anchor = 0;
    std::optional<Index> positive;  // artificial entries transform the anchor
    Interval anchor_overlap;
    Interval positive_overlap;
    double segment_similarity = 0.0;
    std::vector<Index> hard_negatives;
    /// Every admissible negative; used when no hard negative exists.
    std::vector<Index> negatives;
};

struct TripletPool {
    PoolKind kind = PoolKind::annotated;
    std::vector<PoolEntry> entries;

    bool usable() const;
};

/// Annotated pool from segment pairs with enough overlap, artificial pool
/// from every video; candidates above the near-duplicate threshold are
/// never negatives.
std::array<TripletPool, 2> build_pools(const TrainingSet& set, const TrainingConfig& config,
                                       const CoarseEmbedding& embed = coarse_descriptor);

/// Draws one triplet (snippets already cut) from a pool entry.
Tripletf sample_triplet(const TrainingSet& set, const TripletPool& pool, const TrainingConfig& config,
                        std::mt19937_64& rng);

struct HistoryRow {
    std::uint64_t step = 0;
    double triplet = 0.0;
    double regularization = 0.0;
    double total = 0.0;
};

struct ValidationSet {
    std::vector<VideoTensorf> queries;
    std::vector<VideoTensorf> corpus;
    std::vector<std::set<std::string>> relevant;
};

struct TrainState {
    ModelParams<float> params;
    AdamState<float> adam;
    std::uint64_t step = 0;
    double best_map = -1.0;
    std::optional<ModelParams<float>> best;
};

struct TrainOptions {
    /// Stop after this global step count even mid-epoch.
    std::optional<std::uint64_t> max_steps;
    std::uint64_t checkpoint_every = 0;
    std::function<void(const TrainState&)> on_checkpoint;
    std::function<void(const HistoryRow&)> on_step;
    int threads = 1;
};

struct TrainResult {
    ModelParams<float> params;  // best on validation when given, else last
    std::vector<HistoryRow> history;
    std::vector<double> validation_map;
    TrainState state;
};

/// Per-step random source; depends only on (seed, step) so a resumed run
/// draws the same triplets as an uninterrupted one.
std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step);

/// Runs (or resumes from `state`) triplet training: each epoch draws T
/// triplets per usable pool, one triplet per optimizer step.
TrainResult train(const TrainingConfig& config, const TrainingSet& set, std::span<const TripletPool> pools,
                  const ValidationSet* validation, TrainState state, const TrainOptions& options = {});

/// Cycles through fixed triplets in order, one per step, for
/// `config.epochs` passes (or `options.max_steps`).
TrainResult train_on_triplets(const TrainingConfig& config, std::span<const Tripletf> triplets, TrainState state,
                              const TrainOptions& options = {});

void write_history_csv(std::ostream& out, std::span<const HistoryRow> history);

}  // namespace visil
