#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "visil/features.hpp"
#include "visil/grad_tape.hpp"
#include "visil/similarity.hpp"

namespace visil {

/// visil_f: Chamfer over S_f. visil_sym: symmetric Chamfer at frame and
/// video level, no network. visil_v: similarity CNN + hard tanh + Chamfer.
enum class Variant { visil_f, visil_sym, visil_v };

Variant parse_variant(std::string_view text);
std::string_view to_string(Variant variant);

/// Weights of the four-layer network applied to S_f:
/// conv 3x3x1x32, pool, conv 3x3x32x64, pool, conv 3x3x64x128, conv 1x1x128x1.
template <typename Scalar>
struct SimCnnParams {
    static constexpr std::array<std::array<Index, 4>, 4> kKernelShapes{{
        {3, 3, 1, 32},
        {3, 3, 32, 64},
        {3, 3, 64, 128},
        {1, 1, 128, 1},
    }};
    static constexpr Index kLayers = 4;

    std::array<Tensor<Scalar>, kLayers> weights;
    std::array<Tensor<Scalar>, kLayers> biases;

    static SimCnnParams zeros();
    /// Uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); zero biases.
    static SimCnnParams glorot(std::uint64_t seed);
    static constexpr Index parameter_count() {
        Index n = 0;
        for (const auto& k : kKernelShapes) n += k[0] * k[1] * k[2] * k[3] + k[3];
        return n;
    }

    template <typename Other>
    SimCnnParams<Other> cast() const {
        SimCnnParams<Other> out;
        for (Index l = 0; l < kLayers; ++l) {
            out.weights[l] = weights[l].template cast<Other>();
            out.biases[l] = biases[l].template cast<Other>();
        }
        return out;
    }

    friend bool operator==(const SimCnnParams&, const SimCnnParams&) = default;
};

/// Everything needed to score a pair of preprocessed videos.
template <typename Scalar>
struct ModelParams {
    std::optional<WhiteningModel> whitening;
    /// Attention context vector u (unit norm); absent means unattended.
    std::optional<Tensor<Scalar>> attention;
    SimCnnParams<Scalar> cnn;

    /// Trainable tensors under stable names ("attention.u", "conv1.weight", ...).
    std::vector<std::pair<std::string, Tensor<Scalar>*>> trainable();
    std::vector<std::pair<std::string, const Tensor<Scalar>*>> trainable() const;

    template <typename Other>
    ModelParams<Other> cast() const {
        ModelParams<Other> out;
        out.whitening = whitening;
        if (attention) out.attention = attention->template cast<Other>();
        out.cnn = cnn.template cast<Other>();
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Unit-norm context vector drawn from a seeded Gaussian.
template <typename Scalar>
Tensor<Scalar> random_context(Index channels, std::uint64_t seed);

/// Initial parameters: Glorot CNN, optional attention context.
template <typename Scalar>
ModelParams<Scalar> initial_params(std::optional<Index> attention_channels, std::uint64_t seed);

struct ScoringOptions {
    Variant variant = Variant::visil_v;
    PoolingMode frame_mode = PoolingMode::mp_ap;
    PoolingMode video_mode = PoolingMode::mp_ap;
    PairMatrixOptions matrix;
};

/// Rejects combinations outside the supported pooling space.
void validate(const ScoringOptions& options);

struct VideoScore {
    double value = 0.0;
    Variant variant = Variant::visil_v;
};

inline constexpr Index kMinCnnExtent = 4;

/// Raw network output (before hard tanh) for an X x Y S_f with X, Y >= 4;
/// the result is ceil(X/4) x ceil(Y/4).
template <typename Scalar>
SimilarityMatrix<Scalar> sim_cnn_forward(const SimilarityMatrix<Scalar>& s_f, const SimCnnParams<Scalar>& params);

/// Collapses a score matrix to a video similarity for the given variant.
template <typename Scalar>
VideoScore video_score(const SimilarityMatrix<Scalar>& s, Variant variant, PoolingMode video_mode = PoolingMode::mp_ap);

/// Parameters placed on a tape, shared by every pair scored on it.
struct ModelVars {
    std::optional<Var> attention;
    std::array<Var, 4> weights{};
    std::array<Var, 4> biases{};
};

template <typename Scalar>
ModelVars place_params(GradTape<Scalar>& tape, const ModelParams<Scalar>& params, bool trainable);

struct PairGraph {
    Var s_f;
    std::optional<Var> s_v;  // raw network output, visil_v only
    Var score;
};

/// Attention -> frame-to-frame matrix -> (network) -> video score. Videos
/// shorter than 4 frames are edge-replicated up to 4 before the network.
template <typename Scalar>
PairGraph pair_graph(GradTape<Scalar>& tape, Var q, Var p, const ModelVars& vars, const ScoringOptions& options);

/// End-to-end similarity of two preprocessed videos.
template <typename Scalar>
VideoScore score_pair(const VideoTensor<Scalar>& q, const VideoTensor<Scalar>& p, const ModelParams<Scalar>& params,
                      const ScoringOptions& options);

struct PairMatrices {
    SimilarityMatrixf s_f;
    std::optional<SimilarityMatrixf> s_v;
    VideoScore score;
};

/// Intermediate matrices of one pair, for inspection and heatmaps.
PairMatrices pair_matrices(const VideoTensorf& q, const VideoTensorf& p, const ModelParams<float>& params,
                           const ScoringOptions& options);

}  // namespace visil
