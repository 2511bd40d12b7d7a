#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <iomanip>
#include <set>
#include <sstream>

#include "visil/evaluation.hpp"
#include "visil/store.hpp"

using namespace visil;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("visil_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    Result run(const std::string& args) const {
        const fs::path out = root / "stdout.txt", err = root / "stderr.txt";
        const std::string cmd = std::string(VISIL_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }
    std::string p(const std::string& name) const { return (root / name).string(); }
};

std::vector<std::vector<double>> read_csv(const fs::path& p) {
    std::vector<std::vector<double>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

VideoTensorf axis_video(const std::string& id, const std::vector<std::vector<float>>& frames) {
    const Index c = static_cast<Index>(frames[0].size());
    Tensorf t(Shape{static_cast<Index>(frames.size()), 1, 1, c});
    for (std::size_t x = 0; x < frames.size(); ++x)
        for (Index k = 0; k < c; ++k) t[static_cast<Index>(x) * c + k] = frames[x][static_cast<std::size_t>(k)];
    return {id, t};
}

}  // namespace

TEST_CASE("usage errors") {
    Workspace w;
    const Result none = w.run("");
    CHECK(none.code == 2);
    const Result bad = w.run("evaluate --manifest x.jsonl --variant visil_x");
    CHECK(bad.code == 2);
    CHECK(bad.err.rfind("visil: error: ", 0) == 0);
    const Result mode = w.run("evaluate --manifest x.jsonl --f2f-mode max");
    CHECK(mode.code == 2);
    const Result help = w.run("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("simmatrix") != std::string::npos);
}

TEST_CASE("pool") {
    Workspace w;
    REQUIRE(w.run("synth --kind raw --frames 3 --seed 1 --output " + w.p("raw.vslf")).code == 0);
    const Result l3 = w.run("pool --input " + w.p("raw.vslf") + " --output " + w.p("d3.vslf") + " --level L3");
    CHECK(l3.code == 0);
    CHECK(l3.err.empty());
    const VideoTensorf d3 = read_descriptors(w.p("d3.vslf"), "d");
    CHECK(d3.frames() == 3);
    CHECK(d3.grid() == 3);
    CHECK(d3.channels() == 48);
    CHECK(w.run("pool --input " + w.p("raw.vslf") + " --output " + w.p("d1.vslf") + " --level 1").code == 0);
    const VideoTensorf d1 = read_descriptors(w.p("d1.vslf"), "d");
    CHECK(d1.grid() == 1);
    // Level 1: per-layer global max, layer-normalised, then the concatenation normalised.
    const auto raw = read_features(w.p("raw.vslf"));
    const Tensorf& l0 = raw[0].layers[0];
    std::vector<double> m(16, 0.0);
    for (Index i = 0; i < l0.size(); ++i) m[static_cast<std::size_t>(i % 16)] = std::max<double>(m[static_cast<std::size_t>(i % 16)], l0[i]);
    double n2 = 0.0;
    for (double v : m) n2 += v * v;
    CHECK(d1.tensor()[0] == doctest::Approx(m[0] / std::sqrt(n2) / std::sqrt(2.0)).epsilon(1e-5));

    const Result missing = w.run("pool --input " + w.p("nope.vslf") + " --output " + w.p("x.vslf"));
    CHECK(missing.code == 1);
    CHECK(missing.err.rfind("visil: error: ", 0) == 0);
}

TEST_CASE("evaluate and rank on a planted-copy fixture") {
    Workspace w;
    REQUIRE(w.run("synth --kind near-duplicate --videos 24 --queries 3 --channels 64 --seed 29 --output " + w.p("nd"))
                .code == 0);
    const fs::path manifest = w.root / "nd" / "manifest.jsonl";
    const Result ev = w.run("evaluate --variant visil_f --manifest " + manifest.string() + " --output " + w.p("pq.csv"));
    REQUIRE(ev.code == 0);

    const auto m = load_manifest(manifest);
    std::vector<VideoTensorf> corpus, queries;
    std::vector<std::set<std::string>> relevant;
    for (const auto& rec : m.records) {
        corpus.push_back(read_descriptors(rec.features, rec.id));
        if (rec.query) {
            queries.push_back(corpus.back());
            relevant.emplace_back(rec.relevant.begin(), rec.relevant.end());
        }
    }
    ScoringOptions o;
    o.variant = Variant::visil_f;
    const auto lib = evaluate(queries, corpus, relevant, ModelParams<float>{}, o);
    std::ostringstream expected;
    expected << std::setprecision(6) << "mAP " << lib.mean_average_precision << " over 3 queries\n";
    CHECK(ev.out == expected.str());
    CHECK(slurp(w.p("pq.csv")).rfind("query,average_precision,relevant\n", 0) == 0);

    const Result threaded =
        w.run("evaluate --variant visil_f --threads 3 --manifest " + manifest.string());
    CHECK(threaded.out == ev.out);

    const std::string q = queries[0].id();
    const Result rk = w.run("rank --variant visil_f --manifest " + manifest.string() + " --query " + q);
    REQUIRE(rk.code == 0);
    std::istringstream lines(rk.out);
    std::string header, top;
    std::getline(lines, header);
    std::getline(lines, top);
    CHECK(header == "rank,id,score");
    CHECK(top.rfind("1," + q + ",", 0) == 0);
    CHECK(std::stod(top.substr(top.rfind(',') + 1)) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::count(rk.out.begin(), rk.out.end(), '\n') == 25);

    CHECK(w.run("rank --variant visil_v --manifest " + manifest.string() + " --query " + q).code == 1);
    CHECK(w.run("rank --variant visil_f --manifest " + manifest.string() + " --query nobody").code == 1);

    fs::create_directories(w.root / "elsewhere");
    fs::copy_file(manifest, w.root / "elsewhere" / "manifest.jsonl");
    const std::string moved = (w.root / "elsewhere" / "manifest.jsonl").string();
    CHECK(w.run("evaluate --variant visil_f --manifest " + moved).code == 1);
    const std::string env = "VISIL_DATA_DIR=" + (w.root / "nd").string() + " ";
    const Result via_env = [&] {
        const fs::path out = w.root / "env_out.txt";
        const int status = std::system((env + VISIL_CLI_PATH + " evaluate --variant visil_f --manifest " + moved + " >" +
                                        out.string() + " 2>/dev/null")
                                           .c_str());
        return Result{WEXITSTATUS(status), slurp(out), ""};
    }();
    CHECK(via_env.code == 0);
    CHECK(via_env.out == ev.out);
}

TEST_CASE("train writes checkpoints and reproducible histories") {
    Workspace w;
    REQUIRE(w.run("synth --kind training --videos 4 --queries 3 --channels 64 --seed 3 --output " + w.p("tr")).code == 0);
    const std::string manifest = (w.root / "tr" / "manifest.jsonl").string();
    const std::string common = "train --manifest " + manifest + " --snippet 8 --triplets 4 --lr 1e-3 --seed 9 ";

    const Result zero = w.run(common + "--epochs 0 --output-dir " + w.p("zero"));
    REQUIRE(zero.code == 0);
    CHECK(fs::exists(w.root / "zero" / "model.vsck"));
    CHECK_FALSE(fs::exists(w.root / "zero" / "history.csv"));
    const Checkpoint init = load_checkpoint(w.root / "zero" / "model.vsck");
    CHECK(init.state.step == 0);
    CHECK(init.config.seed == 9);

    const Result ra = w.run(common + "--epochs 2 --output-dir " + w.p("a"));
    REQUIRE(ra.code == 0);
    REQUIRE(w.run(common + "--epochs 2 --output-dir " + w.p("b")).code == 0);
    const std::string ha = slurp(w.root / "a" / "history.csv");
    CHECK(ha == slurp(w.root / "b" / "history.csv"));
    CHECK(ha.rfind("step,triplet_loss,regularization_loss,total_loss\n", 0) == 0);
    const auto steps = std::stol(ra.out.substr(std::string("trained to step ").size()));
    CHECK(steps > 5);
    CHECK(std::count(ha.begin(), ha.end(), '\n') == 1 + steps);
    CHECK(slurp(w.root / "a" / "model.vsck") == slurp(w.root / "b" / "model.vsck"));

    // Interrupt after 5 steps, then resume from the periodic checkpoint.
    REQUIRE(w.run(common + "--epochs 2 --max-steps 5 --checkpoint-every 5 --output-dir " + w.p("c")).code == 0);
    REQUIRE(fs::exists(w.root / "c" / "last.vsck"));
    REQUIRE(w.run(common + "--epochs 2 --resume " + w.p("c/last.vsck") + " --output-dir " + w.p("d")).code == 0);
    CHECK(slurp(w.root / "d" / "model.vsck") == slurp(w.root / "a" / "model.vsck"));
    const std::string hd = slurp(w.root / "d" / "history.csv");
    const std::string tail = ha.substr(ha.find("\n5,") + 1);
    CHECK(hd.substr(hd.find('\n') + 1) == tail);
}

TEST_CASE("simmatrix dumps matrices and heatmaps") {
    Workspace w;
    write_descriptors(w.p("a.vslf"), axis_video("a", {{1, 0, 0}}));
    write_descriptors(w.p("b.vslf"), axis_video("b", {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}}));
    const Result r = w.run("simmatrix --variant visil_f --video-a " + w.p("a.vslf") + " --video-b " + w.p("b.vslf") +
                           " --output-dir " + w.p("sm"));
    REQUIRE(r.code == 0);
    const std::string pgm = slurp(w.root / "sm" / "s_f.pgm");
    const std::string header = "P5\n3 1\n255\n";
    REQUIRE(pgm.size() == header.size() + 3);
    CHECK(pgm.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(pgm[header.size()]) == 255);
    CHECK(static_cast<unsigned char>(pgm[header.size() + 1]) == 0);
    CHECK(static_cast<unsigned char>(pgm[header.size() + 2]) == 128);
    CHECK_FALSE(fs::exists(w.root / "sm" / "s_v.csv"));

    std::mt19937_64 rng(4);
    std::normal_distribution<float> g;
    std::vector<std::vector<float>> frames(10, std::vector<float>(16));
    for (auto& f : frames) {
        float n = 0;
        for (auto& v : f) n += (v = g(rng)) * v;
        for (auto& v : f) v /= std::sqrt(n);
    }
    write_descriptors(w.p("v.vslf"), axis_video("v", frames));
    // A zero-epoch checkpoint gives an untrained network for the shape check.
    REQUIRE(w.run("synth --kind training --videos 2 --queries 2 --channels 16 --seed 1 --output " + w.p("t")).code == 0);
    REQUIRE(w.run("train --epochs 0 --manifest " + w.p("t/manifest.jsonl") + " --output-dir " + w.p("m")).code == 0);
    const Result v = w.run("simmatrix --checkpoint " + w.p("m/model.vsck") + " --video-a " + w.p("v.vslf") +
                           " --video-b " + w.p("v.vslf") + " --output-dir " + w.p("vv"));
    REQUIRE(v.code == 0);
    const auto sf = read_csv(w.root / "vv" / "s_f.csv");
    const auto sv = read_csv(w.root / "vv" / "s_v.csv");
    REQUIRE(sf.size() == 10);
    CHECK(sf[0].size() == 10);
    REQUIRE(sv.size() == 3);
    CHECK(sv[0].size() == 3);
    REQUIRE(w.run("simmatrix --variant visil_f --video-a " + w.p("v.vslf") + " --video-b " + w.p("v.vslf") +
                  " --output-dir " + w.p("ff"))
                .code == 0);
    const std::string heat = slurp(w.root / "ff" / "s_f.pgm");
    const std::size_t off = std::string("P5\n10 10\n255\n").size();
    for (std::size_t i = 0; i < 10; ++i) {
        const auto diag = static_cast<unsigned char>(heat[off + i * 10 + i]);
        CHECK(diag == 255);
        for (std::size_t j = 0; j < 10; ++j) CHECK(static_cast<unsigned char>(heat[off + i * 10 + j]) <= diag);
    }
}

TEST_CASE("benchmark writes a report") {
    Workspace w;
    const Result r = w.run("benchmark --sizes 8x1,16x1 --channels 16 --repeats 1 --output " + w.p("b.csv"));
    REQUIRE(r.code == 0);
    CHECK(r.out.find("N=1: online time grows as M^") != std::string::npos);
    const std::string csv = slurp(w.p("b.csv"));
    CHECK(csv.rfind("frames,regions,channels,offline_ms,online_ms\n8,1,16,", 0) == 0);
    CHECK(w.run("benchmark --sizes 8by1").code == 1);
}
