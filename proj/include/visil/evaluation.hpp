#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "visil/model.hpp"

namespace visil {

struct RankedItem {
    std::string id;
    double score = 0.0;
};

/// Ranked list for one query: scores non-increasing, ties by ascending id.
struct RetrievalRun {
    std::string query;
    std::vector<RankedItem> ranking;
    std::set<std::string> relevant;
};

/// Mean over the relevant ranks k of precision@k.
double average_precision(const RetrievalRun& run);

/// Sorts descending by score, ascending id on ties.
void sort_ranking(std::vector<RankedItem>& items);

/// Scores every corpus video against the query. Corpus scoring is spread
/// over `threads`; the output does not depend on the thread count.
RetrievalRun rank_videos(const VideoTensorf& query, std::span<const VideoTensorf> corpus, const ModelParams<float>& params,
                         const ScoringOptions& options, int threads = 1);

struct QueryResult {
    std::string query;
    double average_precision = 0.0;
    std::size_t relevant = 0;
};

struct EvaluationResult {
    double mean_average_precision = 0.0;
    std::vector<QueryResult> per_query;
};

/// mAP over queries; `relevant[i]` labels query i. A query is never ranked
/// against itself.
EvaluationResult evaluate(std::span<const VideoTensorf> queries, std::span<const VideoTensorf> corpus,
                          std::span<const std::set<std::string>> relevant, const ModelParams<float>& params,
                          const ScoringOptions& options, int threads = 1);

void write_per_query_csv(std::ostream& out, const EvaluationResult& result);
void write_ranking_csv(std::ostream& out, const RetrievalRun& run);

struct BenchmarkPoint {
    Index frames = 0;   // M
    Index regions = 0;  // N (grid level)
    Index channels = 0;
    double offline_ms = 0.0;  // per video: region pooling + whitening + attention
    double online_ms = 0.0;   // per pair: full visil_v scoring
};

/// Timings over a grid of (frames, grid level), with the fitted growth
/// exponent of online time in M at every fixed N.
struct BenchmarkReport {
    std::vector<BenchmarkPoint> points;
    std::vector<std::pair<Index, double>> frame_exponents;  // (N, exponent)
};

struct BenchmarkOptions {
    Index channels = 64;
    Index raw_extent = 12;  // spatial size of synthetic raw maps
    int repeats = 3;
    std::uint64_t seed = 0;
};

BenchmarkReport benchmark(std::span<const std::pair<Index, Index>> sizes, const BenchmarkOptions& options = {});
void write_benchmark_csv(std::ostream& out, const BenchmarkReport& report);

/// Least-squares slope of log(y) against log(x).
double log_log_slope(std::span<const double> x, std::span<const double> y);

}  // namespace visil
