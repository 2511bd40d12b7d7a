#include "visil/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>

#include "visil/parallel.hpp"

namespace visil {

double average_precision(const RetrievalRun& run) {
    std::size_t found = 0;
    double total = 0.0;
    for (std::size_t k = 0; k < run.ranking.size(); ++k) {
        if (!run.relevant.count(run.ranking[k].id)) continue;
        ++found;
        total += double(found) / double(k + 1);
    }
    if (found == 0) throw InvalidArgument("query '" + run.query + "' has no relevant item in its ranking");
    return total / double(found);
}

void sort_ranking(std::vector<RankedItem>& items) {
    std::sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
}

namespace {

RetrievalRun rank_subset(const VideoTensorf& query, const std::vector<const VideoTensorf*>& corpus,
                         const ModelParams<float>& params, const ScoringOptions& options, int threads) {
    if (corpus.empty()) throw InvalidArgument("cannot rank against an empty corpus");
    validate(options);
    if (threads < 1) throw InvalidArgument("thread count must be >= 1");
    ScoringOptions inner = options;
    inner.matrix.threads = 1;
    RetrievalRun run;
    run.query = query.id();
    run.ranking.resize(corpus.size());
    parallel_for(static_cast<Index>(corpus.size()), threads, [&](Index i) {
        const auto& video = *corpus[static_cast<std::size_t>(i)];
        run.ranking[static_cast<std::size_t>(i)] = {video.id(), score_pair(query, video, params, inner).value};
    });
    sort_ranking(run.ranking);
    return run;
}

}  // namespace

RetrievalRun rank_videos(const VideoTensorf& query, std::span<const VideoTensorf> corpus, const ModelParams<float>& params,
                         const ScoringOptions& options, int threads) {
    std::vector<const VideoTensorf*> all;
    for (const auto& v : corpus) all.push_back(&v);
    return rank_subset(query, all, params, options, threads);
}

EvaluationResult evaluate(std::span<const VideoTensorf> queries, std::span<const VideoTensorf> corpus,
                          std::span<const std::set<std::string>> relevant, const ModelParams<float>& params,
                          const ScoringOptions& options, int threads) {
    if (queries.empty()) throw InvalidArgument("no queries to evaluate");
    if (relevant.size() != queries.size()) throw InvalidArgument("relevance labels must cover every query");
    EvaluationResult result;
    double total = 0.0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<const VideoTensorf*> others;
        for (const auto& v : corpus)
            if (v.id() != queries[q].id()) others.push_back(&v);
        RetrievalRun run = rank_subset(queries[q], others, params, options, threads);
        run.relevant = relevant[q];
        const double ap = average_precision(run);
        result.per_query.push_back({queries[q].id(), ap, relevant[q].size()});
        total += ap;
    }
    result.mean_average_precision = total / double(queries.size());
    return result;
}

void write_per_query_csv(std::ostream& out, const EvaluationResult& result) {
    out << "query,average_precision,relevant\n" << std::setprecision(17);
    for (const auto& q : result.per_query) out << q.query << ',' << q.average_precision << ',' << q.relevant << '\n';
}

void write_ranking_csv(std::ostream& out, const RetrievalRun& run) {
    out << "rank,id,score\n" << std::setprecision(17);
    for (std::size_t k = 0; k < run.ranking.size(); ++k)
        out << k + 1 << ',' << run.ranking[k].id << ',' << run.ranking[k].score << '\n';
}

double log_log_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("slope fit needs at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidArgument("slope fit needs positive values");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= double(x.size());
    my /= double(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw InvalidArgument("slope fit needs distinct x values");
    return sxy / sxx;
}

namespace {

std::vector<FeatureMapStack> random_stacks(Index frames, Index extent, Index channels, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    const Index half = channels / 2;
    std::vector<FeatureMapStack> stacks(static_cast<std::size_t>(frames));
    for (Index f = 0; f < frames; ++f) {
        auto& s = stacks[static_cast<std::size_t>(f)];
        s.timestamp = double(f);
        s.layers = {Tensorf(Shape{extent, extent, half}), Tensorf(Shape{extent / 2, extent / 2, channels - half})};
        for (auto& layer : s.layers)
            for (auto& v : layer.values()) v = dist(rng);
    }
    return stacks;
}

template <typename Fn>
double best_ms(int repeats, Fn&& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(repeats, 1); ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
        best = std::min(best, took.count());
    }
    return std::max(best, 1e-6);
}

}  // namespace

BenchmarkReport benchmark(std::span<const std::pair<Index, Index>> sizes, const BenchmarkOptions& options) {
    if (sizes.size() < 2) throw InvalidArgument("benchmark needs at least two grid points");
    if (options.channels < 2 || options.raw_extent < 2) throw InvalidArgument("benchmark maps are too small");
    std::mt19937_64 rng(options.seed);
    ModelParams<float> params = initial_params<float>(options.channels, options.seed);
    ScoringOptions scoring;

    BenchmarkReport report;
    for (const auto& [frames, level] : sizes) {
        if (frames < 1 || level < 1 || level > options.raw_extent / 2)
            throw InvalidArgument("invalid benchmark size (" + std::to_string(frames) + ", " + std::to_string(level) + ")");
        const auto stacks_a = random_stacks(frames, options.raw_extent, options.channels, rng);
        const auto stacks_b = random_stacks(frames, options.raw_extent, options.channels, rng);
        // whitening is fitted once per grid point, outside the timed region
        const VideoTensorf probe = region_pool_video("probe", stacks_a, level);
        const std::vector<VideoTensorf> probe_set{probe, region_pool_video("probe_b", stacks_b, level)};
        const RowMatrix<float> sample = sample_regions(probe_set, 4096, options.seed);
        // Max-pooled uniform maps can be nearly degenerate at coarse grids; an
        // identity projection costs the same to apply.
        WhiteningModel whitening = WhiteningModel::identity(options.channels);
        if (sample.rows() > sample.cols()) {
            try {
                whitening = fit_whitening(sample);
            } catch (const RankDeficiencyError&) {
            }
        }

        VideoTensorf a, b;
        BenchmarkPoint point{frames, level, options.channels, 0.0, 0.0};
        point.offline_ms = best_ms(options.repeats, [&] {
            a = attention_weight(apply_whitening(region_pool_video("a", stacks_a, level), whitening), *params.attention);
        });
        b = attention_weight(apply_whitening(region_pool_video("b", stacks_b, level), whitening), *params.attention);
        // attention is already applied; score with the network only
        ModelParams<float> online = params;
        online.attention.reset();
        point.online_ms = best_ms(options.repeats, [&] { (void)score_pair(a, b, online, scoring); });
        report.points.push_back(point);
    }

    std::map<Index, std::pair<std::vector<double>, std::vector<double>>> by_level;
    for (const auto& p : report.points) {
        by_level[p.regions].first.push_back(double(p.frames));
        by_level[p.regions].second.push_back(p.online_ms);
    }
    for (const auto& [level, xy] : by_level) {
        std::set<double> distinct(xy.first.begin(), xy.first.end());
        if (distinct.size() >= 2) report.frame_exponents.emplace_back(level, log_log_slope(xy.first, xy.second));
    }
    return report;
}

void write_benchmark_csv(std::ostream& out, const BenchmarkReport& report) {
    out << "frames,regions,channels,offline_ms,online_ms\n" << std::setprecision(9);
    for (const auto& p : report.points)
        out << p.frames << ',' << p.regions << ',' << p.channels << ',' << p.offline_ms << ',' << p.online_ms << '\n';
}

}  // namespace visil
