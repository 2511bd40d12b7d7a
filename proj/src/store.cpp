#include "visil/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace visil {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::span<const std::byte> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(std::random_device{}());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

std::vector<std::byte> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> out(raw.size());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::byte*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
    }
    void u8(std::uint8_t v) { uint(v); }
    void u32(std::uint32_t v) { uint(v); }
    void u64(std::uint64_t v) { uint(v); }
    void i64(std::int64_t v) { uint(static_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::byte>& buffer() { return buf_; }

private:
    std::vector<std::byte> buf_;
};

class Reader {
public:
    Reader(std::span<const std::byte> data, std::string what) : data_(data), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (n > data_.size() - pos_)
            throw TruncatedFileError(what_ + ": truncated, expected at least " + std::to_string(pos_ + n) +
                                     " bytes, got " + std::to_string(data_.size()));
    }
    template <typename U>
    U uint() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(std::to_integer<U>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    std::uint8_t u8() { return uint<std::uint8_t>(); }
    std::uint32_t u32() { return uint<std::uint32_t>(); }
    std::uint64_t u64() { return uint<std::uint64_t>(); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool flag() {
        const std::uint8_t v = u8();
        if (v > 1) throw FormatError(what_ + ": corrupt flag byte");
        return v == 1;
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::span<const std::byte> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

constexpr char kFeatureMagic[4] = {'V', 'S', 'L', 'F'};
constexpr char kCheckpointMagic[4] = {'V', 'S', 'C', 'K'};

void check_magic(Reader& r, const char (&magic)[4], const std::string& what) {
    r.need(4);
    char got[4];
    for (char& c : got) c = static_cast<char>(r.u8());
    if (std::memcmp(got, magic, 4) != 0)
        throw BadMagicError(what + ": not a " + std::string(magic, 4) + " file");
}

void check_version(std::uint32_t got, std::uint32_t want, const std::string& what) {
    if (got != want)
        throw VersionMismatchError(what + ": format version " + std::to_string(got) + ", expected " +
                                   std::to_string(want));
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const std::string& what) {
    if (b != 0 && a > std::numeric_limits<std::uint64_t>::max() / b) throw FormatError(what + ": header sizes overflow");
    return a * b;
}

}  // namespace

void write_features(const fs::path& path, std::span<const FeatureMapStack> frames) {
    if (frames.empty()) throw InvalidArgument("a feature file needs at least one frame");
    const auto& first = frames.front().layers;
    for (const auto& f : frames) {
        f.validate();
        if (f.layers.size() != first.size()) throw ShapeError("all frames must have the same layer count");
        for (std::size_t k = 0; k < first.size(); ++k)
            if (f.layers[k].shape() != first[k].shape()) throw ShapeError("all frames must share layer shapes");
    }
    Writer w;
    w.bytes(kFeatureMagic, 4);
    w.u32(kFeatureVersion);
    w.u32(static_cast<std::uint32_t>(frames.size()));
    w.u32(static_cast<std::uint32_t>(first.size()));
    for (const auto& layer : first) {
        w.u32(static_cast<std::uint32_t>(layer.dim(0)));
        w.u32(static_cast<std::uint32_t>(layer.dim(1)));
        w.u32(static_cast<std::uint32_t>(layer.dim(2)));
    }
    const std::size_t payload_start = w.buffer().size();
    for (const auto& f : frames)
        for (const auto& layer : f.layers)
            for (float v : layer.values()) w.f32(v);
    const auto payload = std::span<const std::byte>(w.buffer()).subspan(payload_start);
    w.u64(fnv1a64(payload));
    write_file_atomic(path, w.buffer());
}

std::vector<FeatureMapStack> read_features(const fs::path& path) {
    const std::vector<std::byte> data = read_file(path);
    const std::string what = path.string();
    Reader r(data, what);
    check_magic(r, kFeatureMagic, what);
    check_version(r.u32(), kFeatureVersion, what);
    const std::uint32_t frames = r.u32();
    const std::uint32_t layers = r.u32();
    if (frames == 0) throw FormatError(what + ": frame count must be at least 1");
    if (layers == 0) throw FormatError(what + ": layer count must be at least 1");
    r.need(checked_mul(layers, 12, what));
    std::vector<Shape> shapes;
    std::uint64_t per_frame = 0;
    for (std::uint32_t k = 0; k < layers; ++k) {
        const std::uint32_t h = r.u32(), wd = r.u32(), c = r.u32();
        if (h == 0 || wd == 0 || c == 0) throw FormatError(what + ": layer " + std::to_string(k) + " has a zero extent");
        shapes.push_back(Shape{Index(h), Index(wd), Index(c)});
        per_frame += checked_mul(checked_mul(h, wd, what), c, what);
    }
    const std::uint64_t payload = checked_mul(checked_mul(per_frame, frames, what), 4, what);
    const std::uint64_t expected = r.position() + payload + 8;
    if (data.size() < expected)
        throw TruncatedFileError(what + ": truncated, expected " + std::to_string(expected) + " bytes, got " +
                                 std::to_string(data.size()));
    if (data.size() > expected)
        throw FormatError(what + ": " + std::to_string(data.size() - expected) + " unexpected trailing bytes");
    const auto body = std::span<const std::byte>(data).subspan(r.position(), payload);
    std::vector<FeatureMapStack> out(frames);
    for (std::uint32_t f = 0; f < frames; ++f) {
        out[f].timestamp = double(f);
        for (const Shape& s : shapes) {
            Tensorf t(s);
            for (auto& v : t.values()) v = r.f32();
            out[f].layers.push_back(std::move(t));
        }
    }
    const std::uint64_t stored = r.u64();
    if (stored != fnv1a64(body)) throw ChecksumError(what + ": payload checksum mismatch");
    return out;
}

void write_descriptors(const fs::path& path, const VideoTensorf& video) {
    std::vector<FeatureMapStack> frames(static_cast<std::size_t>(video.frames()));
    for (Index f = 0; f < video.frames(); ++f) frames[static_cast<std::size_t>(f)].layers = {video.frame(f).tensor()};
    write_features(path, frames);
}

VideoTensorf read_descriptors(const fs::path& path, std::string id) {
    const auto frames = read_features(path);
    const Shape& s = frames.front().layers.front().shape();
    if (frames.front().layers.size() != 1 || s[0] != s[1])
        throw FormatError(path.string() + ": not a descriptor file (expected one N x N x C layer per frame)");
    std::vector<FrameDescriptorf> descs;
    descs.reserve(frames.size());
    for (const auto& f : frames) descs.emplace_back(f.layers.front());
    return VideoTensorf::from_frames(std::move(id), descs);
}

std::optional<std::size_t> DatasetManifest::find(const std::string& id) const {
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].id == id) return i;
    return std::nullopt;
}

namespace {

Interval parse_interval(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw FormatError(where + ": interval must be [start, end]");
    const Interval iv{j[0].get<double>(), j[1].get<double>()};
    if (!(iv.start < iv.end))
        throw FormatError(where + ": interval [" + std::to_string(iv.start) + ", " + std::to_string(iv.end) +
                          "] must have start < end");
    return iv;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, const std::optional<fs::path>& data_dir) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    const fs::path base = data_dir ? *data_dir : path.parent_path();
    DatasetManifest manifest;
    std::set<std::string> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(where + ": " + e.what());
        }
        try {
            if (!j.is_object()) throw FormatError(where + ": record must be an object");
            ManifestRecord rec;
            rec.line = line;
            rec.id = j.at("id").get<std::string>();
            if (rec.id.empty()) throw FormatError(where + ": empty id");
            if (!seen.insert(rec.id).second) throw FormatError(where + ": duplicate video id '" + rec.id + "'");
            fs::path features = j.at("features").get<std::string>();
            rec.features = features.is_absolute() ? features : base / features;
            if (!fs::exists(rec.features))
                throw FormatError(where + ": feature file " + rec.features.string() + " does not exist");
            rec.duration = j.value("duration", 0.0);
            if (rec.duration < 0.0) throw FormatError(where + ": negative duration");
            if (j.contains("segments"))
                for (const auto& s : j.at("segments"))
                    rec.segments.push_back({s.at("peer").get<std::string>(), parse_interval(s.at("self"), where),
                                            parse_interval(s.at("other"), where)});
            if (j.contains("relevant")) rec.relevant = j.at("relevant").get<std::vector<std::string>>();
            rec.query = j.value("query", !rec.relevant.empty());
            manifest.records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    for (const auto& rec : manifest.records) {
        const std::string where = path.string() + ":" + std::to_string(rec.line);
        for (const auto& s : rec.segments)
            if (!seen.count(s.peer)) throw FormatError(where + ": segment peer '" + s.peer + "' is not in the manifest");
        for (const auto& id : rec.relevant)
            if (!seen.count(id)) throw FormatError(where + ": relevant id '" + id + "' is not in the manifest");
    }
    return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest, const fs::path& base) {
    std::ostringstream out;
    for (const auto& rec : manifest.records) {
        nlohmann::json j;
        j["id"] = rec.id;
        const fs::path relative = fs::absolute(rec.features).lexically_relative(fs::absolute(base));
        j["features"] = (relative.empty() ? rec.features : relative).generic_string();
        j["duration"] = rec.duration;
        if (!rec.segments.empty()) {
            j["segments"] = nlohmann::json::array();
            for (const auto& s : rec.segments)
                j["segments"].push_back(
                    {{"peer", s.peer}, {"self", {s.self.start, s.self.end}}, {"other", {s.other.start, s.other.end}}});
        }
        if (!rec.relevant.empty()) j["relevant"] = rec.relevant;
        if (rec.query) j["query"] = true;
        out << j.dump() << '\n';
    }
    const std::string text = out.str();
    write_file_atomic(path, std::as_bytes(std::span(text)));
}

TrainingSet load_training_set(const DatasetManifest& manifest) {
    TrainingSet set;
    std::map<std::string, Index> index;
    for (const auto& rec : manifest.records) {
        index[rec.id] = static_cast<Index>(set.videos.size());
        set.videos.push_back(read_descriptors(rec.features, rec.id));
    }
    std::set<std::pair<Index, Index>> seen;
    for (const auto& rec : manifest.records)
        for (const auto& s : rec.segments) {
            Index a = index.at(rec.id), p = index.at(s.peer);
            Interval sa = s.self, sp = s.other;
            if (a > p) {
                std::swap(a, p);
                std::swap(sa, sp);
            }
            if (a == p || !seen.insert({a, p}).second) continue;
            set.pairs.push_back({a, p, sa, sp});
        }
    return set;
}

namespace {

void put_tensor(Writer& w, const Tensorf& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape().extents()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.f32(v);
}

Tensorf get_tensor(Reader& r) {
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) throw FormatError("checkpoint: bad tensor rank " + std::to_string(rank));
    std::vector<Index> dims;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0) throw FormatError("checkpoint: zero tensor extent");
        dims.push_back(d);
        count = checked_mul(count, d, "checkpoint");
    }
    r.need(checked_mul(count, 4, "checkpoint"));
    Tensorf t{Shape(std::span<const Index>(dims))};
    for (auto& v : t.values()) v = r.f32();
    return t;
}

void put_params(Writer& w, const ModelParams<float>& p) {
    w.u8(p.whitening ? 1 : 0);
    if (p.whitening) {
        const auto& m = *p.whitening;
        w.u32(static_cast<std::uint32_t>(m.output_dim()));
        w.u32(static_cast<std::uint32_t>(m.input_dim()));
        for (Index i = 0; i < m.mean.size(); ++i) w.f32(m.mean[i]);
        for (Index i = 0; i < m.projection.size(); ++i) w.f32(m.projection.data()[i]);
        w.u32(static_cast<std::uint32_t>(m.eigenvalues.size()));
        for (Index i = 0; i < m.eigenvalues.size(); ++i) w.f64(m.eigenvalues[i]);
    }
    w.u8(p.attention ? 1 : 0);
    if (p.attention) put_tensor(w, *p.attention);
    for (Index l = 0; l < SimCnnParams<float>::kLayers; ++l) {
        put_tensor(w, p.cnn.weights[l]);
        put_tensor(w, p.cnn.biases[l]);
    }
}

ModelParams<float> get_params(Reader& r) {
    ModelParams<float> p;
    if (r.flag()) {
        WhiteningModel m;
        const std::uint32_t out = r.u32(), in = r.u32();
        r.need(checked_mul(in, 4, "checkpoint") + checked_mul(checked_mul(out, in, "checkpoint"), 4, "checkpoint"));
        m.mean.resize(in);
        for (Index i = 0; i < m.mean.size(); ++i) m.mean[i] = r.f32();
        m.projection.resize(out, in);
        for (Index i = 0; i < m.projection.size(); ++i) m.projection.data()[i] = r.f32();
        const std::uint32_t eig = r.u32();
        r.need(checked_mul(eig, 8, "checkpoint"));
        m.eigenvalues.resize(eig);
        for (Index i = 0; i < m.eigenvalues.size(); ++i) m.eigenvalues[i] = r.f64();
        p.whitening = std::move(m);
    }
    if (r.flag()) p.attention = get_tensor(r);
    p.cnn = SimCnnParams<float>::zeros();
    for (Index l = 0; l < SimCnnParams<float>::kLayers; ++l) {
        p.cnn.weights[l] = get_tensor(r);
        p.cnn.biases[l] = get_tensor(r);
        const auto& k = SimCnnParams<float>::kKernelShapes[static_cast<std::size_t>(l)];
        if (p.cnn.weights[l].shape() != Shape{k[0], k[1], k[2], k[3]} || p.cnn.biases[l].shape() != Shape{k[3]})
            throw FormatError("checkpoint: layer " + std::to_string(l + 1) + " has unexpected shape");
    }
    return p;
}

void put_moments(Writer& w, const std::map<std::string, Tensorf>& m) {
    w.u32(static_cast<std::uint32_t>(m.size()));
    for (const auto& [name, t] : m) {
        w.str(name);
        put_tensor(w, t);
    }
}

std::map<std::string, Tensorf> get_moments(Reader& r) {
    std::map<std::string, Tensorf> m;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.str();
        m.emplace(std::move(name), get_tensor(r));
    }
    return m;
}

PoolingMode get_mode(Reader& r) {
    const std::uint8_t v = r.u8();
    if (v > 1) throw FormatError("checkpoint: bad pooling mode");
    return static_cast<PoolingMode>(v);
}

}  // namespace

bool operator==(const Checkpoint& a, const Checkpoint& b) {
    const auto bits = [](double x) { return std::bit_cast<std::uint64_t>(x); };
    return a.config == b.config && a.state.params == b.state.params && a.state.adam == b.state.adam &&
           a.state.step == b.state.step && bits(a.state.best_map) == bits(b.state.best_map) && a.state.best == b.state.best;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    Writer w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    const std::size_t body_start = w.buffer().size();
    const TrainingConfig& c = ck.config;
    w.f64(c.margin);
    w.f64(c.regularization);
    w.i64(c.snippet_frames);
    w.i64(c.triplets_per_pool);
    w.f64(c.learning_rate);
    w.i64(c.epochs);
    w.u64(c.seed);
    w.u8(static_cast<std::uint8_t>(c.frame_mode));
    w.u8(static_cast<std::uint8_t>(c.video_mode));
    w.f64(c.min_overlap_seconds);
    w.f64(c.artificial_negative_threshold);
    w.f64(c.near_duplicate_threshold);
    put_params(w, ck.state.params);
    w.u64(ck.state.adam.step);
    put_moments(w, ck.state.adam.first_moment);
    put_moments(w, ck.state.adam.second_moment);
    w.u64(ck.state.step);
    w.f64(ck.state.best_map);
    w.u8(ck.state.best ? 1 : 0);
    if (ck.state.best) put_params(w, *ck.state.best);
    const auto body = std::span<const std::byte>(w.buffer()).subspan(body_start);
    w.u64(fnv1a64(body));
    write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::vector<std::byte> data = read_file(path);
    const std::string what = path.string();
    Reader header(data, what);
    check_magic(header, kCheckpointMagic, what);
    check_version(header.u32(), kCheckpointVersion, what);
    if (header.remaining() < 8) throw TruncatedFileError(what + ": truncated, no checksum trailer");
    const auto body = std::span<const std::byte>(data).subspan(header.position(), header.remaining() - 8);
    Reader trailer(std::span<const std::byte>(data).subspan(data.size() - 8), what);
    if (trailer.u64() != fnv1a64(body)) throw ChecksumError(what + ": checksum mismatch");

    Reader r(body, what);
    Checkpoint ck;
    TrainingConfig& c = ck.config;
    c.margin = r.f64();
    c.regularization = r.f64();
    c.snippet_frames = r.i64();
    c.triplets_per_pool = r.i64();
    c.learning_rate = r.f64();
    c.epochs = r.i64();
    c.seed = r.u64();
    c.frame_mode = get_mode(r);
    c.video_mode = get_mode(r);
    c.min_overlap_seconds = r.f64();
    c.artificial_negative_threshold = r.f64();
    c.near_duplicate_threshold = r.f64();
    ck.state.params = get_params(r);
    ck.state.adam.step = r.u64();
    ck.state.adam.first_moment = get_moments(r);
    ck.state.adam.second_moment = get_moments(r);
    ck.state.step = r.u64();
    ck.state.best_map = r.f64();
    if (r.flag()) ck.state.best = get_params(r);
    if (r.remaining() != 0) throw FormatError(what + ": unexpected bytes after checkpoint body");
    return ck;
}

}  // namespace visil
