#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "visil/evaluation.hpp"
#include "visil/store.hpp"
#include "visil/synthetic.hpp"

namespace fs = std::filesystem;
using namespace visil;

namespace {

struct Common {
    std::string variant = "visil_v";
    std::string f2f = "mp-ap";
    std::string v2v = "mp-ap";
    int threads = 1;
    std::string checkpoint;
    std::string data_dir;
};

void add_scoring_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--variant", c.variant, "visil_f, visil_sym or visil_v")
        ->check(CLI::IsMember({"visil_f", "visil_sym", "visil_v"}))
        ->capture_default_str();
    cmd->add_option("--f2f-mode", c.f2f, "frame-to-frame pooling")->check(CLI::IsMember({"mp-ap", "ap-ap"}))->capture_default_str();
    cmd->add_option("--v2v-mode", c.v2v, "video-to-video pooling")->check(CLI::IsMember({"mp-ap", "ap-ap"}))->capture_default_str();
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--checkpoint", c.checkpoint, "model checkpoint (required for visil_v)");
}

ScoringOptions scoring(const Common& c) {
    ScoringOptions o;
    o.variant = parse_variant(c.variant);
    o.frame_mode = parse_pooling_mode(c.f2f);
    o.video_mode = parse_pooling_mode(c.v2v);
    validate(o);
    return o;
}

ModelParams<float> model_of(const Checkpoint& ck) { return ck.state.best ? *ck.state.best : ck.state.params; }

ModelParams<float> load_model(const Common& c, Variant variant) {
    if (c.checkpoint.empty()) {
        if (variant == Variant::visil_v) throw InvalidArgument("visil_v needs --checkpoint");
        return {};
    }
    return model_of(load_checkpoint(c.checkpoint));
}

std::optional<fs::path> data_dir(const Common& c) {
    if (c.data_dir.empty()) return std::nullopt;
    return fs::path(c.data_dir);
}

VideoTensorf prepare(VideoTensorf video, const ModelParams<float>& params) {
    if (params.whitening) video = apply_whitening(video, *params.whitening);
    return video;
}

std::vector<VideoTensorf> load_videos(const DatasetManifest& manifest, const ModelParams<float>& params) {
    std::vector<VideoTensorf> out;
    for (const auto& rec : manifest.records) out.push_back(prepare(read_descriptors(rec.features, rec.id), params));
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, std::as_bytes(std::span(text)));
}

void write_matrix_csv(const fs::path& path, const SimilarityMatrixf& m) {
    std::ostringstream out;
    out << std::setprecision(9);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m.values(i, j);
        out << '\n';
    }
    write_text(path, out.str());
}

void write_pgm(const fs::path& path, const SimilarityMatrixf& m) {
    std::string text = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) {
            const long g = std::lround((static_cast<double>(m.values(i, j)) + 1.0) * 127.5);
            text.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(g, 0L, 255L))));
        }
    write_text(path, text);
}

Index parse_level(const std::string& text) {
    std::string digits = text;
    if (!digits.empty() && (digits[0] == 'L' || digits[0] == 'l')) digits = digits.substr(1);
    std::size_t used = 0;
    int level = 0;
    try {
        level = std::stoi(digits, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != digits.size() || digits.empty() || level < 1) throw InvalidArgument("bad level '" + text + "' (expected e.g. 3 or L3)");
    return level;
}

std::vector<std::pair<Index, Index>> parse_sizes(const std::string& text) {
    std::vector<std::pair<Index, Index>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos) throw InvalidArgument("bad size '" + item + "' (expected MxN)");
        out.emplace_back(std::stol(item.substr(0, x)), std::stol(item.substr(x + 1)));
    }
    return out;
}

DatasetManifest records_for(const std::vector<VideoTensorf>& videos, const fs::path& dir) {
    DatasetManifest m;
    fs::create_directories(dir / "features");
    for (const auto& v : videos) {
        ManifestRecord rec;
        rec.id = v.id();
        rec.features = dir / "features" / (v.id() + ".vslf");
        rec.duration = double(v.frames());
        write_descriptors(rec.features, v);
        m.records.push_back(std::move(rec));
    }
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video similarity learning: pooling, training, ranking and evaluation", "visil"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    Common c;

    // pool
    auto* pool = app.add_subcommand("pool", "region-pool raw activation stacks into descriptors");
    std::string pool_in, pool_out, level_text = "3";
    pool->add_option("--input", pool_in, "raw VSLF file")->required();
    pool->add_option("--output", pool_out, "descriptor VSLF file")->required();
    pool->add_option("--level", level_text, "grid level N (e.g. 3 or L3)")->capture_default_str();
    pool->add_option("--checkpoint", c.checkpoint, "apply this checkpoint's whitening");

    // whiten
    auto* whiten = app.add_subcommand("whiten", "fit PCA whitening on descriptor files and start a checkpoint");
    std::string whiten_manifest, whiten_out;
    Index whiten_dim = 0, whiten_max = 100000;
    std::uint64_t seed = 0;
    whiten->add_option("--manifest", whiten_manifest)->required();
    whiten->add_option("--output", whiten_out, "checkpoint to write")->required();
    whiten->add_option("--dim", whiten_dim, "reduced dimension (0 keeps all)");
    whiten->add_option("--max-regions", whiten_max)->capture_default_str();
    whiten->add_option("--seed", seed)->capture_default_str();
    whiten->add_option("--data-dir", c.data_dir)->envname("VISIL_DATA_DIR");

    // train
    auto* train_cmd = app.add_subcommand("train", "triplet training from a manifest");
    TrainingConfig cfg;
    std::string train_manifest, validation_manifest, out_dir, init, resume;
    std::uint64_t checkpoint_every = 0, max_steps = 0;
    train_cmd->add_option("--manifest", train_manifest)->required();
    train_cmd->add_option("--validation", validation_manifest, "manifest with query records for model selection");
    train_cmd->add_option("--output-dir", out_dir)->required();
    train_cmd->add_option("--init", init, "checkpoint to start from (e.g. from whiten)");
    train_cmd->add_option("--resume", resume, "continue an interrupted run");
    train_cmd->add_option("--gamma", cfg.margin)->capture_default_str();
    train_cmd->add_option("--reg", cfg.regularization)->capture_default_str();
    train_cmd->add_option("--snippet", cfg.snippet_frames)->capture_default_str();
    train_cmd->add_option("--triplets", cfg.triplets_per_pool)->capture_default_str();
    train_cmd->add_option("--lr", cfg.learning_rate)->capture_default_str();
    train_cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
    train_cmd->add_option("--seed", cfg.seed)->capture_default_str();
    train_cmd->add_option("--checkpoint-every", checkpoint_every, "steps between checkpoints (0: never)");
    train_cmd->add_option("--max-steps", max_steps, "stop after this many steps (0: no limit)");
    train_cmd->add_option("--f2f-mode", c.f2f)->check(CLI::IsMember({"mp-ap", "ap-ap"}))->capture_default_str();
    train_cmd->add_option("--v2v-mode", c.v2v)->check(CLI::IsMember({"mp-ap", "ap-ap"}))->capture_default_str();
    train_cmd->add_option("--threads", c.threads)->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--data-dir", c.data_dir)->envname("VISIL_DATA_DIR");

    // rank
    auto* rank = app.add_subcommand("rank", "rank a manifest's videos against one query");
    std::string rank_manifest, query_id, rank_out;
    rank->add_option("--manifest", rank_manifest)->required();
    rank->add_option("--query", query_id, "query video id")->required();
    rank->add_option("--output", rank_out, "ranking CSV");
    rank->add_option("--data-dir", c.data_dir)->envname("VISIL_DATA_DIR");
    add_scoring_flags(rank, c);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "mAP over the manifest's query records");
    std::string eval_manifest, eval_out;
    eval->add_option("--manifest", eval_manifest)->required();
    eval->add_option("--output", eval_out, "per-query CSV");
    eval->add_option("--data-dir", c.data_dir)->envname("VISIL_DATA_DIR");
    add_scoring_flags(eval, c);

    // simmatrix
    auto* sim = app.add_subcommand("simmatrix", "dump S_f and S_v for a pair as CSV and PGM");
    std::string video_a, video_b, sim_out;
    sim->add_option("--video-a", video_a)->required();
    sim->add_option("--video-b", video_b)->required();
    sim->add_option("--output-dir", sim_out)->required();
    add_scoring_flags(sim, c);

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "time offline and online stages over a size grid");
    std::string sizes_text = "64x3,128x3,256x3", bench_out;
    BenchmarkOptions bench_opts;
    bench->add_option("--sizes", sizes_text, "comma list of MxN")->capture_default_str();
    bench->add_option("--channels", bench_opts.channels)->capture_default_str();
    bench->add_option("--repeats", bench_opts.repeats)->capture_default_str();
    bench->add_option("--seed", bench_opts.seed)->capture_default_str();
    bench->add_option("--output", bench_out, "report CSV");

    // synth
    auto* syn = app.add_subcommand("synth", "write synthetic fixtures");
    std::string kind = "near-duplicate", syn_out;
    Index syn_videos = 200, syn_queries = 20, syn_frames = 10, syn_channels = 512;
    syn->add_option("--kind", kind, "near-duplicate, hard, training or raw")
        ->check(CLI::IsMember({"near-duplicate", "hard", "training", "raw"}))
        ->capture_default_str();
    syn->add_option("--output", syn_out, "directory (raw: file)")->required();
    syn->add_option("--videos", syn_videos)->capture_default_str();
    syn->add_option("--queries", syn_queries)->capture_default_str();
    syn->add_option("--frames", syn_frames, "raw only")->capture_default_str();
    syn->add_option("--channels", syn_channels)->capture_default_str();
    syn->add_option("--seed", seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "visil: error: " << e.what() << "\nRun with --help for usage.\n";
        return 2;
    }

    try {
        if (*pool) {
            const Index level = parse_level(level_text);
            const auto frames = read_features(pool_in);
            VideoTensorf video = region_pool_video(fs::path(pool_in).stem().string(), frames, level);
            if (!c.checkpoint.empty()) video = prepare(std::move(video), model_of(load_checkpoint(c.checkpoint)));
            write_descriptors(pool_out, video);
            std::cout << "pooled " << video.frames() << " frames into " << level << "x" << level << "x"
                      << video.channels() << " descriptors\n";
        } else if (*whiten) {
            const auto manifest = load_manifest(whiten_manifest, data_dir(c));
            const auto videos = load_videos(manifest, {});
            const RowMatrix<float> sample = sample_regions(videos, whiten_max, seed);
            Checkpoint ck;
            ck.config.seed = seed;
            const WhiteningModel model =
                fit_whitening(sample, whiten_dim > 0 ? std::optional<Index>(whiten_dim) : std::nullopt);
            ck.state.params = initial_params<float>(model.output_dim(), seed);
            ck.state.params.whitening = model;
            save_checkpoint(whiten_out, ck);
            std::cout << "whitening " << model.input_dim() << " -> " << model.output_dim() << " fitted on "
                      << sample.rows() << " regions\n";
        } else if (*train_cmd) {
            cfg.frame_mode = parse_pooling_mode(c.f2f);
            cfg.video_mode = parse_pooling_mode(c.v2v);
            fs::create_directories(out_dir);
            Checkpoint start;
            if (!resume.empty()) {
                start = load_checkpoint(resume);
                cfg = start.config;
            } else if (!init.empty()) {
                start = load_checkpoint(init);
                start.state = TrainState{start.state.params, {}, 0, -1.0, std::nullopt};
            }
            start.config = cfg;
            cfg.validate();
            const auto manifest = load_manifest(train_manifest, data_dir(c));
            TrainingSet set = load_training_set(manifest);
            const ModelParams<float>& base = start.state.params;
            for (auto& v : set.videos) v = prepare(std::move(v), base);
            if (resume.empty() && init.empty()) {
                if (set.videos.empty()) throw InvalidArgument("training manifest is empty");
                start.state.params = initial_params<float>(set.videos.front().channels(), cfg.seed);
            }

            std::optional<ValidationSet> validation;
            if (!validation_manifest.empty()) {
                const auto vm = load_manifest(validation_manifest, data_dir(c));
                ValidationSet vs;
                vs.corpus = load_videos(vm, base);
                for (std::size_t i = 0; i < vm.records.size(); ++i)
                    if (vm.records[i].query) {
                        vs.queries.push_back(vs.corpus[i]);
                        vs.relevant.emplace_back(vm.records[i].relevant.begin(), vm.records[i].relevant.end());
                    }
                if (vs.queries.empty()) throw InvalidArgument("validation manifest has no query records");
                validation = std::move(vs);
            }

            const fs::path final_path = fs::path(out_dir) / "model.vsck";
            const fs::path history_path = fs::path(out_dir) / "history.csv";
            if (cfg.epochs == 0) {
                save_checkpoint(final_path, start);
                std::cout << "epochs = 0: wrote initial checkpoint " << final_path.string() << "\n";
                return 0;
            }
            const auto pools = build_pools(set, cfg);
            TrainOptions opts;
            opts.threads = c.threads;
            if (max_steps) opts.max_steps = max_steps;
            opts.checkpoint_every = checkpoint_every;
            opts.on_checkpoint = [&](const TrainState& s) {
                save_checkpoint(fs::path(out_dir) / "last.vsck", Checkpoint{cfg, s});
            };
            const TrainResult result =
                train(cfg, set, pools, validation ? &*validation : nullptr, start.state, opts);
            std::ostringstream hist;
            write_history_csv(hist, result.history);
            write_text(history_path, hist.str());
            save_checkpoint(final_path, Checkpoint{cfg, result.state});
            double tail = 0.0;
            const std::size_t n = std::min<std::size_t>(result.history.size(), 100);
            for (std::size_t i = result.history.size() - n; i < result.history.size(); ++i) tail += result.history[i].triplet;
            std::cout << "trained to step " << result.state.step << "; mean triplet loss over last " << n
                      << " steps " << (n ? tail / double(n) : 0.0) << "\n";
            if (!result.validation_map.empty()) std::cout << "best validation mAP " << result.state.best_map << "\n";
        } else if (*rank) {
            const ScoringOptions o = scoring(c);
            const ModelParams<float> params = load_model(c, o.variant);
            const auto manifest = load_manifest(rank_manifest, data_dir(c));
            const auto at = manifest.find(query_id);
            if (!at) throw InvalidArgument("query '" + query_id + "' is not in the manifest");
            const auto videos = load_videos(manifest, params);
            const RetrievalRun run = rank_videos(videos[*at], videos, params, o, c.threads);
            std::ostringstream csv;
            write_ranking_csv(csv, run);
            if (!rank_out.empty()) write_text(rank_out, csv.str());
            else std::cout << csv.str();
        } else if (*eval) {
            const ScoringOptions o = scoring(c);
            const ModelParams<float> params = load_model(c, o.variant);
            const auto manifest = load_manifest(eval_manifest, data_dir(c));
            const auto videos = load_videos(manifest, params);
            std::vector<VideoTensorf> queries;
            std::vector<std::set<std::string>> relevant;
            for (std::size_t i = 0; i < manifest.records.size(); ++i)
                if (manifest.records[i].query) {
                    queries.push_back(videos[i]);
                    relevant.emplace_back(manifest.records[i].relevant.begin(), manifest.records[i].relevant.end());
                }
            if (queries.empty()) throw InvalidArgument("manifest has no query records");
            const EvaluationResult result = evaluate(queries, videos, relevant, params, o, c.threads);
            if (!eval_out.empty()) {
                std::ostringstream csv;
                write_per_query_csv(csv, result);
                write_text(eval_out, csv.str());
            }
            std::cout << std::setprecision(6) << "mAP " << result.mean_average_precision << " over "
                      << result.per_query.size() << " queries\n";
        } else if (*sim) {
            ScoringOptions o = scoring(c);
            o.matrix.threads = c.threads;
            const ModelParams<float> params = load_model(c, o.variant);
            const VideoTensorf a = prepare(read_descriptors(video_a, "a"), params);
            const VideoTensorf b = prepare(read_descriptors(video_b, "b"), params);
            const PairMatrices m = pair_matrices(a, b, params, o);
            const fs::path dir = sim_out;
            write_matrix_csv(dir / "s_f.csv", m.s_f);
            write_pgm(dir / "s_f.pgm", m.s_f);
            if (m.s_v) {
                write_matrix_csv(dir / "s_v.csv", *m.s_v);
                write_pgm(dir / "s_v.pgm", *m.s_v);
            }
            std::cout << std::setprecision(9) << "similarity " << m.score.value << "\n";
        } else if (*bench) {
            const auto sizes = parse_sizes(sizes_text);
            const BenchmarkReport report = benchmark(sizes, bench_opts);
            std::ostringstream csv;
            write_benchmark_csv(csv, report);
            if (!bench_out.empty()) write_text(bench_out, csv.str());
            else std::cout << csv.str();
            for (const auto& [level, exponent] : report.frame_exponents)
                std::cout << "N=" << level << ": online time grows as M^" << std::setprecision(3) << exponent << "\n";
        } else if (*syn) {
            synth::WorldOptions world;
            world.channels = syn_channels;
            if (kind == "raw") {
                const auto stacks = synth::raw_stacks(syn_frames, {{8, 8, 16}, {4, 4, 32}}, seed);
                if (fs::path(syn_out).has_parent_path()) fs::create_directories(fs::path(syn_out).parent_path());
                write_features(syn_out, stacks);
                return 0;
            }
            const fs::path dir = syn_out;
            synth::SplitOptions split;
            split.videos = syn_videos;
            split.queries = syn_queries;
            DatasetManifest manifest;
            if (kind == "training") {
                split.positives_per_query = 1;
                split.hard_negatives_per_query = 2;
                const TrainingSet set = synth::hard_training_set(world, split, syn_queries, syn_videos, seed);
                manifest = records_for(set.videos, dir);
                for (const auto& p : set.pairs) {
                    auto& rec = manifest.records[static_cast<std::size_t>(p.anchor)];
                    rec.segments.push_back({set.videos[static_cast<std::size_t>(p.positive)].id(), p.anchor_segment,
                                            p.positive_segment});
                }
            } else {
                const synth::RetrievalSplit s = kind == "hard" ? synth::hard_split(world, split, seed)
                                                               : synth::near_duplicate_split(world, split, seed);
                manifest = records_for(s.corpus, dir);
                for (std::size_t q = 0; q < s.queries.size(); ++q) {
                    auto& rec = manifest.records[*manifest.find(s.queries[q].id())];
                    rec.query = true;
                    rec.relevant.assign(s.relevant[q].begin(), s.relevant[q].end());
                }
            }
            write_manifest(dir / "manifest.jsonl", manifest, dir);
            std::cout << "wrote " << manifest.records.size() << " videos to " << dir.string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "visil: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
