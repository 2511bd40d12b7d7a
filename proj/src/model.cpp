#include "visil/model.hpp"

#include <random>

namespace visil {

Variant parse_variant(std::string_view text) {
    if (text == "visil_f") return Variant::visil_f;
    if (text == "visil_sym") return Variant::visil_sym;
    if (text == "visil_v") return Variant::visil_v;
    throw InvalidArgument("unknown variant '" + std::string(text) + "' (expected visil_f, visil_sym or visil_v)");
}

std::string_view to_string(Variant variant) {
    switch (variant) {
        case Variant::visil_f: return "visil_f";
        case Variant::visil_sym: return "visil_sym";
        case Variant::visil_v: return "visil_v";
    }
    return "?";
}

namespace {
Shape kernel_shape(Index layer) {
    const auto& k = SimCnnParams<float>::kKernelShapes[static_cast<std::size_t>(layer)];
    return Shape{k[0], k[1], k[2], k[3]};
}
}  // namespace

template <typename Scalar>
SimCnnParams<Scalar> SimCnnParams<Scalar>::zeros() {
    SimCnnParams p;
    for (Index l = 0; l < kLayers; ++l) {
        p.weights[l] = Tensor<Scalar>(kernel_shape(l));
        p.biases[l] = Tensor<Scalar>(Shape{kernel_shape(l)[3]});
    }
    return p;
}

template <typename Scalar>
SimCnnParams<Scalar> SimCnnParams<Scalar>::glorot(std::uint64_t seed) {
    SimCnnParams p = zeros();
    std::mt19937_64 rng(seed);
    for (Index l = 0; l < kLayers; ++l) {
        const Shape s = kernel_shape(l);
        const double fan_in = double(s[0] * s[1] * s[2]);
        const double fan_out = double(s[0] * s[1] * s[3]);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : p.weights[l].values()) w = static_cast<Scalar>(limit * dist(rng));
    }
    return p;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>*>> ModelParams<Scalar>::trainable() {
    std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
    if (attention) out.emplace_back("attention.u", &*attention);
    for (Index l = 0; l < SimCnnParams<Scalar>::kLayers; ++l) {
        out.emplace_back("conv" + std::to_string(l + 1) + ".weight", &cnn.weights[l]);
        out.emplace_back("conv" + std::to_string(l + 1) + ".bias", &cnn.biases[l]);
    }
    return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, const Tensor<Scalar>*>> ModelParams<Scalar>::trainable() const {
    std::vector<std::pair<std::string, const Tensor<Scalar>*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->trainable()) out.emplace_back(name, t);
    return out;
}

template <typename Scalar>
Tensor<Scalar> random_context(Index channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    Vector<double> u(channels);
    for (Index c = 0; c < channels; ++c) u[c] = dist(rng);
    u.normalize();
    Tensor<Scalar> out(Shape{channels});
    out.flat() = u.cast<Scalar>();
    return out;
}

template <typename Scalar>
ModelParams<Scalar> initial_params(std::optional<Index> attention_channels, std::uint64_t seed) {
    ModelParams<Scalar> p;
    p.cnn = SimCnnParams<Scalar>::glorot(seed);
    if (attention_channels) p.attention = random_context<Scalar>(*attention_channels, seed ^ 0x9e3779b97f4a7c15ULL);
    return p;
}

void validate(const ScoringOptions& options) {
    if (options.variant == Variant::visil_sym &&
        (options.frame_mode != PoolingMode::mp_ap || options.video_mode != PoolingMode::mp_ap))
        throw InvalidArgument("visil_sym is defined with symmetric Chamfer only; pooling modes must be mp-ap");
    if (options.matrix.threads < 1) throw InvalidArgument("thread count must be >= 1");
}

namespace {

template <typename Scalar>
Var cnn_graph(GradTape<Scalar>& t, Var s_f, const ModelVars& vars) {
    const Tensor<Scalar>& sf = t.value(s_f);
    Var x = ad::reshape(t, s_f, Shape{sf.dim(0), sf.dim(1), 1});
    x = ad::relu(t, ad::conv2d(t, x, vars.weights[0], vars.biases[0]));
    x = ad::max_pool2d(t, x);
    x = ad::relu(t, ad::conv2d(t, x, vars.weights[1], vars.biases[1]));
    x = ad::max_pool2d(t, x);
    x = ad::relu(t, ad::conv2d(t, x, vars.weights[2], vars.biases[2]));
    x = ad::conv2d(t, x, vars.weights[3], vars.biases[3]);
    const Tensor<Scalar>& out = t.value(x);
    return ad::reshape(t, x, Shape{out.dim(0), out.dim(1)});
}

template <typename Scalar>
Var collapse(GradTape<Scalar>& t, Var m, Variant variant, PoolingMode video_mode) {
    if (variant == Variant::visil_sym)
        return ad::scale(t, ad::add(t, ad::row_max_mean(t, m), ad::col_max_mean(t, m)), 0.5);
    return video_mode == PoolingMode::mp_ap ? ad::row_max_mean(t, m) : ad::mean(t, m);
}

}  // namespace

template <typename Scalar>
ModelVars place_params(GradTape<Scalar>& tape, const ModelParams<Scalar>& params, bool trainable) {
    ModelVars vars;
    auto place = [&](const std::string& name, const Tensor<Scalar>& value) {
        return trainable ? tape.parameter(name, value) : tape.constant(value);
    };
    if (params.attention) vars.attention = place("attention.u", *params.attention);
    for (Index l = 0; l < SimCnnParams<Scalar>::kLayers; ++l) {
        const auto i = static_cast<std::size_t>(l);
        vars.weights[i] = place("conv" + std::to_string(l + 1) + ".weight", params.cnn.weights[i]);
        vars.biases[i] = place("conv" + std::to_string(l + 1) + ".bias", params.cnn.biases[i]);
    }
    return vars;
}

template <typename Scalar>
PairGraph pair_graph(GradTape<Scalar>& t, Var q, Var p, const ModelVars& vars, const ScoringOptions& options) {
    validate(options);
    if (vars.attention) {
        q = ad::attend(t, q, *vars.attention);
        p = ad::attend(t, p, *vars.attention);
    }
    const FrameReduction how = options.variant == Variant::visil_sym ? FrameReduction::symmetric_chamfer
                                                                      : frame_reduction(options.frame_mode);
    PairGraph graph;
    graph.s_f = ad::frame_similarity(t, q, p, how, options.matrix);
    if (options.variant != Variant::visil_v) {
        graph.score = collapse(t, graph.s_f, options.variant, options.video_mode);
        return graph;
    }
    const Var padded = ad::pad_replicate(t, graph.s_f, kMinCnnExtent, kMinCnnExtent);
    graph.s_v = cnn_graph(t, padded, vars);
    graph.score = collapse(t, ad::hard_tanh(t, *graph.s_v), options.variant, options.video_mode);
    return graph;
}

template <typename Scalar>
SimilarityMatrix<Scalar> sim_cnn_forward(const SimilarityMatrix<Scalar>& s_f, const SimCnnParams<Scalar>& params) {
    if (s_f.rows() < kMinCnnExtent || s_f.cols() < kMinCnnExtent)
        throw ShapeError("similarity network needs at least 4 x 4 input, got " + std::to_string(s_f.rows()) + " x " +
                         std::to_string(s_f.cols()));
    GradTape<Scalar> tape(false);
    ModelParams<Scalar> holder;
    holder.cnn = params;
    const ModelVars vars = place_params(tape, holder, false);
    Tensor<Scalar> input(Shape{s_f.rows(), s_f.cols()});
    input.matrix(s_f.rows()) = s_f.values;
    const Var out = cnn_graph(tape, tape.constant(std::move(input)), vars);
    const Tensor<Scalar>& v = tape.value(out);
    return {v.matrix(v.dim(0)), SimilarityRole::video_level};
}

template <typename Scalar>
VideoScore video_score(const SimilarityMatrix<Scalar>& s, Variant variant, PoolingMode video_mode) {
    if (s.rows() < 1 || s.cols() < 1) throw ShapeError("video_score: empty matrix");
    switch (variant) {
        case Variant::visil_sym: return {symmetric_chamfer(s.values), variant};
        case Variant::visil_f:
            return {video_mode == PoolingMode::mp_ap ? chamfer(s.values) : average_pool(s.values), variant};
        case Variant::visil_v: {
            const RowMatrix<Scalar> clipped = s.values.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
            return {video_mode == PoolingMode::mp_ap ? chamfer(clipped) : average_pool(clipped), variant};
        }
    }
    return {};
}

template <typename Scalar>
VideoScore score_pair(const VideoTensor<Scalar>& q, const VideoTensor<Scalar>& p, const ModelParams<Scalar>& params,
                      const ScoringOptions& options) {
    if (q.frames() < 1 || p.frames() < 1) throw InvalidArgument("cannot score an empty video");
    GradTape<Scalar> tape(false);
    const ModelVars vars = place_params(tape, params, false);
    const PairGraph g = pair_graph(tape, tape.constant(q.tensor()), tape.constant(p.tensor()), vars, options);
    return {static_cast<double>(tape.value(g.score)[0]), options.variant};
}

PairMatrices pair_matrices(const VideoTensorf& q, const VideoTensorf& p, const ModelParams<float>& params,
                           const ScoringOptions& options) {
    GradTape<float> tape(false);
    const ModelVars vars = place_params(tape, params, false);
    const PairGraph g = pair_graph(tape, tape.constant(q.tensor()), tape.constant(p.tensor()), vars, options);
    PairMatrices out;
    const auto& sf = tape.value(g.s_f);
    out.s_f = {sf.matrix(sf.dim(0)), SimilarityRole::frame_level};
    if (g.s_v) {
        const auto& sv = tape.value(*g.s_v);
        out.s_v = SimilarityMatrixf{sv.matrix(sv.dim(0)), SimilarityRole::video_level};
    }
    out.score = {static_cast<double>(tape.value(g.score)[0]), options.variant};
    return out;
}

#define VISIL_INSTANTIATE_MODEL(T)                                                                           \
    template struct SimCnnParams<T>;                                                                         \
    template struct ModelParams<T>;                                                                          \
    template Tensor<T> random_context<T>(Index, std::uint64_t);                                              \
    template ModelParams<T> initial_params<T>(std::optional<Index>, std::uint64_t);                          \
    template ModelVars place_params<T>(GradTape<T>&, const ModelParams<T>&, bool);                           \
    template PairGraph pair_graph<T>(GradTape<T>&, Var, Var, const ModelVars&, const ScoringOptions&);       \
    template SimilarityMatrix<T> sim_cnn_forward<T>(const SimilarityMatrix<T>&, const SimCnnParams<T>&);     \
    template VideoScore video_score<T>(const SimilarityMatrix<T>&, Variant, PoolingMode);                    \
    template VideoScore score_pair<T>(const VideoTensor<T>&, const VideoTensor<T>&, const ModelParams<T>&,   \
                                      const ScoringOptions&);

VISIL_INSTANTIATE_MODEL(float)
VISIL_INSTANTIATE_MODEL(double)

}  // namespace visil
