#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "visil/store.hpp"

using namespace visil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("visil_store_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path operator/(const std::string& name) const { return path / name; }
};

std::vector<FeatureMapStack> seeded_stacks(Index frames, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<FeatureMapStack> out(static_cast<std::size_t>(frames));
    for (auto& s : out) {
        s.layers.push_back(oracle::random_tensor<float>(Shape{4, 3, 2}, rng, 0.0, 1.0));
        s.layers.push_back(oracle::random_tensor<float>(Shape{2, 2, 5}, rng, 0.0, 1.0));
    }
    return out;
}

void write_bytes(const fs::path& p, const std::vector<std::byte>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

void put_u32(std::vector<std::byte>& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("fnv1a64 reference values") {
    CHECK(fnv1a64({}) == 0xcbf29ce484222325ull);
    const std::string a = "a";
    CHECK(fnv1a64(std::as_bytes(std::span(a))) == 0xaf63dc4c8601ec8cull);
    const std::string foobar = "foobar";
    CHECK(fnv1a64(std::as_bytes(std::span(foobar))) == 0x85944171f73967e8ull);
}

TEST_CASE("feature files round trip bit-exactly") {
    TempDir dir;
    const auto stacks = seeded_stacks(3, 1);
    write_features(dir / "a.vslf", stacks);
    const auto back = read_features(dir / "a.vslf");
    REQUIRE(back.size() == 3);
    for (std::size_t f = 0; f < 3; ++f) {
        CHECK(back[f].timestamp == double(f));
        REQUIRE(back[f].layers.size() == 2);
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(back[f].layers[k].shape() == stacks[f].layers[k].shape());
            CHECK(std::memcmp(back[f].layers[k].data(), stacks[f].layers[k].data(),
                              sizeof(float) * static_cast<std::size_t>(stacks[f].layers[k].size())) == 0);
        }
    }
    write_features(dir / "b.vslf", back);
    CHECK(read_file(dir / "a.vslf") == read_file(dir / "b.vslf"));
}

TEST_CASE("feature file layout") {
    TempDir dir;
    const auto stacks = seeded_stacks(2, 2);
    write_features(dir / "a.vslf", stacks);
    const auto bytes = read_file(dir / "a.vslf");
    // magic, version, X, K, K * (H, W, C), payload, checksum
    const std::size_t header = 4 + 4 + 4 + 4 + 2 * 12;
    const std::size_t payload = 2 * (24 + 20) * 4;
    REQUIRE(bytes.size() == header + payload + 8);
    CHECK(std::memcmp(bytes.data(), "VSLF", 4) == 0);
    CHECK(std::to_integer<int>(bytes[4]) == 1);
    CHECK(std::to_integer<int>(bytes[8]) == 2);
    CHECK(std::to_integer<int>(bytes[12]) == 2);
    float first;
    std::memcpy(&first, bytes.data() + header, 4);
    CHECK(first == stacks[0].layers[0][0]);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= std::uint64_t(std::to_integer<unsigned>(bytes[header + payload + i])) << (8 * i);
    CHECK(stored == fnv1a64(std::span(bytes).subspan(header, payload)));
}

TEST_CASE("feature file corruption") {
    TempDir dir;
    write_features(dir / "a.vslf", seeded_stacks(2, 3));
    const auto good = read_file(dir / "a.vslf");

    auto truncated = good;
    truncated.resize(good.size() - 10);
    write_bytes(dir / "t.vslf", truncated);
    const std::string msg = error_of([&] { read_features(dir / "t.vslf"); });
    CHECK(msg.find("expected " + std::to_string(good.size()) + " bytes") != std::string::npos);
    CHECK(msg.find("got " + std::to_string(truncated.size())) != std::string::npos);
    CHECK_THROWS_AS(read_features(dir / "t.vslf"), TruncatedFileError);

    auto header_only = good;
    header_only.resize(10);
    write_bytes(dir / "h.vslf", header_only);
    CHECK_THROWS_AS(read_features(dir / "h.vslf"), TruncatedFileError);

    auto magic = good;
    magic[0] = std::byte{'X'};
    write_bytes(dir / "m.vslf", magic);
    CHECK_THROWS_AS(read_features(dir / "m.vslf"), BadMagicError);

    auto version = good;
    put_u32(version, 4, 2);
    write_bytes(dir / "v.vslf", version);
    CHECK_THROWS_AS(read_features(dir / "v.vslf"), VersionMismatchError);

    auto flipped = good;
    flipped[60] ^= std::byte{0x01};
    write_bytes(dir / "c.vslf", flipped);
    CHECK_THROWS_AS(read_features(dir / "c.vslf"), ChecksumError);

    auto trailing = good;
    trailing.push_back(std::byte{0});
    write_bytes(dir / "x.vslf", trailing);
    CHECK_THROWS_AS(read_features(dir / "x.vslf"), FormatError);

    auto huge = good;
    put_u32(huge, 8, 0xffffffffu);
    write_bytes(dir / "big.vslf", huge);
    CHECK_THROWS_AS(read_features(dir / "big.vslf"), TruncatedFileError);

    // Header with X = 0 and an empty payload.
    std::vector<std::byte> empty(28 + 8);
    std::memcpy(empty.data(), "VSLF", 4);
    put_u32(empty, 4, 1);
    put_u32(empty, 8, 0);
    put_u32(empty, 12, 1);
    put_u32(empty, 16, 1);
    put_u32(empty, 20, 1);
    put_u32(empty, 24, 1);
    write_bytes(dir / "e.vslf", empty);
    CHECK_THROWS_AS(read_features(dir / "e.vslf"), FormatError);
    CHECK_THROWS(write_features(dir / "none.vslf", std::vector<FeatureMapStack>{}));
    CHECK_THROWS(read_features(dir / "missing.vslf"));
}

TEST_CASE("descriptor files") {
    TempDir dir;
    std::mt19937_64 rng(4);
    const VideoTensorf v("v", oracle::random_unit_video<float>(5, 3, 7, rng));
    write_descriptors(dir / "d.vslf", v);
    const VideoTensorf back = read_descriptors(dir / "d.vslf", "w");
    CHECK(back.id() == "w");
    CHECK(back.tensor() == v.tensor());
    write_features(dir / "raw.vslf", seeded_stacks(2, 5));
    CHECK_THROWS_AS(read_descriptors(dir / "raw.vslf", "r"), FormatError);
}

TEST_CASE("manifest loading") {
    TempDir dir;
    std::mt19937_64 rng(6);
    for (const char* id : {"a", "b"})
        write_descriptors(dir / (std::string(id) + ".vslf"), VideoTensorf(id, oracle::random_unit_video<float>(20, 2, 4, rng)));
    write_text(dir / "m.jsonl",
               R"({"id": "a", "features": "a.vslf", "duration": 20, "segments": [{"peer": "b", "self": [2, 12], "other": [5, 15]}]})"
               "\n\n"
               R"({"id": "b", "features": "b.vslf", "duration": 20, "relevant": ["a"]})"
               "\n");
    const auto m = load_manifest(dir / "m.jsonl");
    REQUIRE(m.records.size() == 2);
    CHECK(m.records[0].features == dir / "a.vslf");
    CHECK(m.records[0].segments[0].peer == "b");
    CHECK(m.records[0].segments[0].self.start == 2.0);
    CHECK(m.records[0].segments[0].other.end == 15.0);
    CHECK_FALSE(m.records[0].query);
    CHECK(m.records[1].query);
    CHECK(m.records[1].line == 3);
    CHECK(m.find("b") == std::size_t{1});
    CHECK_FALSE(m.find("c"));

    const TrainingSet set = load_training_set(m);
    REQUIRE(set.videos.size() == 2);
    REQUIRE(set.pairs.size() == 1);
    CHECK(set.pairs[0].anchor == 0);
    CHECK(set.pairs[0].positive == 1);
    CHECK(set.pairs[0].positive_segment.start == 5.0);

    write_manifest(dir / "copy.jsonl", m, dir.path);
    const auto again = load_manifest(dir / "copy.jsonl");
    CHECK(again.records[0].features == m.records[0].features);
    CHECK(again.records[0].segments[0].self.end == 12.0);

    fs::create_directories(dir / "sub");
    fs::copy_file(dir / "m.jsonl", dir / "sub" / "m.jsonl");
    CHECK_THROWS_AS(load_manifest(dir / "sub" / "m.jsonl"), FormatError);
    CHECK(load_manifest(dir / "sub" / "m.jsonl", dir.path).records.size() == 2);
}

TEST_CASE("manifest errors name the line") {
    TempDir dir;
    std::mt19937_64 rng(7);
    write_descriptors(dir / "a.vslf", VideoTensorf("a", oracle::random_unit_video<float>(4, 1, 2, rng)));
    const std::string a = R"({"id": "a", "features": "a.vslf"})";
    auto fails = [&](const std::string& text, const std::string& needle) {
        write_text(dir / "bad.jsonl", text);
        const std::string msg = error_of([&] { load_manifest(dir / "bad.jsonl"); });
        INFO(msg);
        CHECK(msg.find(needle) != std::string::npos);
        CHECK_THROWS_AS(load_manifest(dir / "bad.jsonl"), FormatError);
    };
    fails(a + "\n" + a + "\n", "bad.jsonl:2: duplicate video id");
    fails(R"({"id": "a", "features": "a.vslf", "segments": [{"peer": "a", "self": [50, 30], "other": [0, 10]}]})", ":1:");
    fails(R"({"id": "a", "features": "nope.vslf"})", "does not exist");
    fails(R"({"id": "a", "features": "a.vslf", "relevant": ["zz"]})", "relevant id 'zz'");
    fails(R"({"id": "a", "features": "a.vslf", "segments": [{"peer": "q", "self": [0, 5], "other": [0, 5]}]})", "peer 'q'");
    fails("{not json", ":1:");
    fails(R"({"features": "a.vslf"})", ":1:");
}

TEST_CASE("checkpoints round trip and are idempotent") {
    TempDir dir;
    Checkpoint c;
    c.config.seed = 42;
    c.config.video_mode = PoolingMode::ap_ap;
    c.config.learning_rate = 3e-4;
    c.state.params = initial_params<float>(6, 1);
    std::mt19937_64 rng(8);
    RowMatrix<float> sample(50, 6);
    for (Index i = 0; i < sample.size(); ++i) sample.data()[i] = static_cast<float>(std::normal_distribution<double>()(rng));
    c.state.params.whitening = fit_whitening(sample, 4);
    std::map<std::string, Tensorf> grads;
    for (const auto& [name, t] : c.state.params.trainable()) grads[name] = oracle::random_tensor<float>(t->shape(), rng);
    adam_step(c.state.params, grads, c.state.adam, 1e-3);
    c.state.step = 17;
    c.state.best_map = 0.625;
    c.state.best = c.state.params;

    save_checkpoint(dir / "a.vsck", c);
    const Checkpoint back = load_checkpoint(dir / "a.vsck");
    CHECK(back == c);
    CHECK(back.state.params == c.state.params);
    CHECK(back.state.adam == c.state.adam);
    save_checkpoint(dir / "b.vsck", back);
    CHECK(read_file(dir / "a.vsck") == read_file(dir / "b.vsck"));

    Checkpoint bare;
    bare.state.params = initial_params<float>(std::nullopt, 2);
    save_checkpoint(dir / "bare.vsck", bare);
    CHECK(load_checkpoint(dir / "bare.vsck") == bare);
}

TEST_CASE("corrupted checkpoints are refused") {
    TempDir dir;
    Checkpoint c;
    c.state.params = initial_params<float>(4, 3);
    save_checkpoint(dir / "a.vsck", c);
    auto bytes = read_file(dir / "a.vsck");
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= std::byte{0x10};
    write_bytes(dir / "f.vsck", flipped);
    CHECK_THROWS_AS(load_checkpoint(dir / "f.vsck"), ChecksumError);
    auto version = bytes;
    put_u32(version, 4, 9);
    write_bytes(dir / "v.vsck", version);
    CHECK_THROWS_AS(load_checkpoint(dir / "v.vsck"), VersionMismatchError);
    bytes.resize(bytes.size() - 3);
    write_bytes(dir / "t.vsck", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.vsck"), FormatError);
    write_features(dir / "f.vslf", seeded_stacks(1, 1));
    CHECK_THROWS_AS(load_checkpoint(dir / "f.vslf"), BadMagicError);
}

TEST_CASE("atomic writes replace the target") {
    TempDir dir;
    const std::string first = "first", second = "second!";
    write_file_atomic(dir / "f", std::as_bytes(std::span(first)));
    write_file_atomic(dir / "f", std::as_bytes(std::span(second)));
    CHECK(read_file(dir / "f").size() == second.size());
    int files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
    CHECK(files == 1);
}
