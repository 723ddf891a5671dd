#include "ldc/bundle.hpp"

#include "ldc/error.hpp"
#include "ldc/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ldc {

using nlohmann::json;

Projector Projector::make_identity(std::size_t dim) {
    Projector p;
    p.identity = true;
    p.dim = dim;
    return p;
}

Projector Projector::make_affine(const Matrix& weight, Vector bias) {
    if (bias.size() != weight.cols()) {
        throw ShapeError("projector bias has dim " + std::to_string(bias.size()) + ", weight output dim is " +
                         std::to_string(weight.cols()));
    }
    Projector p;
    p.identity = false;
    p.map = nn::LinearLayer{weight.transposed(), std::move(bias)};
    return p;
}

Vector Projector::apply(std::span<const double> x) const {
    if (identity) {
        if (x.size() != dim) {
            throw ShapeError("projector expects dim " + std::to_string(dim) + ", got " + std::to_string(x.size()));
        }
        return Vector(x.begin(), x.end());
    }
    return nn::linear_forward(x, map);
}

Vector Projector::backward_input(std::span<const double> dy) const {
    if (identity) return Vector(dy.begin(), dy.end());
    Vector dx(map.in_dim(), 0.0);
    for (std::size_t r = 0; r < map.out_dim(); ++r) {
        const auto w = map.weight.row(r);
        for (std::size_t c = 0; c < dx.size(); ++c) dx[c] += dy[r] * w[c];
    }
    return dx;
}

bool FeatureBundle::has_embeddings() const noexcept {
    return !records.empty() && !records.front().embedding.empty();
}

bool FeatureBundle::has_explicit_test() const noexcept {
    return std::any_of(records.begin(), records.end(), [](const Record& r) { return r.test; });
}

void validate(const FeatureBundle& b) {
    const Manifest& m = b.manifest;
    if (m.num_classes == 0) throw ValidationError("manifest declares zero classes");
    if (m.class_names.size() != m.num_classes) {
        throw ValidationError("manifest has " + std::to_string(m.class_names.size()) + " class names for " +
                              std::to_string(m.num_classes) + " classes");
    }
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (m.level_dims[l] == 0) throw ValidationError("level " + std::to_string(l + 1) + " has zero dim");
    }
    if (m.embed_dim == 0) throw ValidationError("embedding dim is zero");
    if (!(m.temperature > 0.0) || !std::isfinite(m.temperature)) {
        throw ValidationError("temperature must be positive and finite");
    }
    if (b.text_embeddings.rows() != m.num_classes || b.text_embeddings.cols() != m.embed_dim) {
        throw ValidationError("text embeddings are " + std::to_string(b.text_embeddings.rows()) + "x" +
                              std::to_string(b.text_embeddings.cols()) + ", expected " +
                              std::to_string(m.num_classes) + "x" + std::to_string(m.embed_dim));
    }
    if (!all_finite(b.text_embeddings.values())) throw ValidationError("text embeddings contain non-finite values");
    if (b.projector.out_dim() != m.embed_dim) {
        throw ValidationError("projector output dim " + std::to_string(b.projector.out_dim()) +
                              " differs from embedding dim " + std::to_string(m.embed_dim));
    }
    if (!b.projector.identity) {
        if (b.projector.map.bias.size() != b.projector.map.out_dim()) {
            throw ValidationError("projector bias dim mismatch");
        }
        if (!all_finite(b.projector.map.weight.values()) || !all_finite(b.projector.map.bias)) {
            throw ValidationError("projector contains non-finite values");
        }
    }
    const bool with_embeddings = b.has_embeddings();
    for (const Record& r : b.records) {
        if (r.label >= m.num_classes) {
            throw ValidationError("record '" + r.id + "' has label " + std::to_string(r.label) + " but only " +
                                  std::to_string(m.num_classes) + " classes exist");
        }
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (r.levels[l].size() != m.level_dims[l]) {
                throw ValidationError("record '" + r.id + "' level " + std::to_string(l + 1) + " has dim " +
                                      std::to_string(r.levels[l].size()) + ", manifest says " +
                                      std::to_string(m.level_dims[l]));
            }
            if (!all_finite(r.levels[l])) {
                throw ValidationError("record '" + r.id + "' level " + std::to_string(l + 1) + " is non-finite");
            }
        }
        if (with_embeddings != !r.embedding.empty()) {
            throw ValidationError("record '" + r.id + "': embeddings must be present for all records or none");
        }
        if (with_embeddings && r.embedding.size() != m.embed_dim) {
            throw ValidationError("record '" + r.id + "' embedding has dim " + std::to_string(r.embedding.size()));
        }
        if (with_embeddings && !all_finite(r.embedding)) {
            throw ValidationError("record '" + r.id + "' embedding is non-finite");
        }
    }
    if (!with_embeddings && m.level_dims[3] != b.projector.in_dim()) {
        throw ValidationError("bundle has no image embeddings and level 4 dim " + std::to_string(m.level_dims[3]) +
                              " does not match projector input dim " + std::to_string(b.projector.in_dim()));
    }
}

bool identical(const FeatureBundle& a, const FeatureBundle& b) {
    const Manifest& ma = a.manifest;
    const Manifest& mb = b.manifest;
    if (ma.num_classes != mb.num_classes || ma.class_names != mb.class_names || ma.level_dims != mb.level_dims ||
        ma.embed_dim != mb.embed_dim ||
        std::bit_cast<std::uint64_t>(ma.temperature) != std::bit_cast<std::uint64_t>(mb.temperature) ||
        ma.metadata != mb.metadata) {
        return false;
    }
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const Record& ra = a.records[i];
        const Record& rb = b.records[i];
        if (ra.id != rb.id || ra.label != rb.label || ra.test != rb.test) return false;
        for (std::size_t l = 0; l < kNumLevels; ++l)
            if (!bitwise_equal(ra.levels[l], rb.levels[l])) return false;
        if (!bitwise_equal(ra.embedding, rb.embedding)) return false;
    }
    if (a.text_embeddings.rows() != b.text_embeddings.rows() ||
        !bitwise_equal(a.text_embeddings.values(), b.text_embeddings.values())) {
        return false;
    }
    const Projector& pa = a.projector;
    const Projector& pb = b.projector;
    if (pa.identity != pb.identity || pa.in_dim() != pb.in_dim() || pa.out_dim() != pb.out_dim()) return false;
    if (!pa.identity) {
        return bitwise_equal(pa.map.weight.values(), pb.map.weight.values()) &&
               bitwise_equal(pa.map.bias, pb.map.bias);
    }
    return true;
}

namespace {

struct ArrayDecl {
    std::string name;
    std::vector<std::size_t> shape;
};

// Canonical payload order. The manifest repeats it so readers in other languages
// can stream the arrays without reimplementing this logic.
std::vector<ArrayDecl> payload_layout(const FeatureBundle& b) {
    const Manifest& m = b.manifest;
    const std::size_t n = b.records.size();
    std::vector<ArrayDecl> out;
    out.push_back({"text_embeddings", {m.num_classes, m.embed_dim}});
    if (!b.projector.identity) {
        out.push_back({"projector.weight", {b.projector.in_dim(), b.projector.out_dim()}});
        out.push_back({"projector.bias", {b.projector.out_dim()}});
    }
    for (std::size_t l = 0; l < kNumLevels; ++l) out.push_back({"level" + std::to_string(l + 1), {n, m.level_dims[l]}});
    if (b.has_embeddings()) out.push_back({"embeddings", {n, m.embed_dim}});
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

void put_values(std::string& out, std::span<const double> values) {
    for (double d : values) put_f64(out, d);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw TruncatedError(std::string("bundle truncated while reading ") + what + " (need " +
                                 std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                                 std::to_string(bytes_.size() - pos_) + ")");
        }
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint64_t le(std::size_t width, const char* what) {
        const auto s = take(width, what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(s[i])} << (8 * i);
        return v;
    }

    void read_values(std::span<double> out, const char* what) {
        const auto s = take(out.size() * 8, what);
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::uint64_t v = 0;
            for (std::size_t k = 0; k < 8; ++k)
                v |= std::uint64_t{static_cast<unsigned char>(s[i * 8 + k])} << (8 * k);
            out[i] = std::bit_cast<double>(v);
        }
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

json manifest_json(const FeatureBundle& b) {
    const Manifest& m = b.manifest;
    json j;
    j["num_classes"] = m.num_classes;
    j["class_names"] = m.class_names;
    j["level_dims"] = m.level_dims;
    j["embed_dim"] = m.embed_dim;
    j["temperature"] = m.temperature;
    j["metadata"] = m.metadata;
    j["projector"] = {{"identity", b.projector.identity},
                      {"in_dim", b.projector.in_dim()},
                      {"out_dim", b.projector.out_dim()}};
    j["has_embeddings"] = b.has_embeddings();
    json records = json::array();
    for (const Record& r : b.records) records.push_back({{"id", r.id}, {"label", r.label}, {"test", r.test}});
    j["records"] = std::move(records);
    json arrays = json::array();
    for (const auto& a : payload_layout(b)) arrays.push_back({{"name", a.name}, {"shape", a.shape}});
    j["arrays"] = std::move(arrays);
    return j;
}

template <class T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("manifest is missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest field '") + key + "' has the wrong type: " + e.what());
    }
}

}  // namespace

std::string encode_bundle(const FeatureBundle& b) {
    validate(b);
    const std::string manifest = manifest_json(b).dump();
    std::string out;
    out.append(kBundleMagic);
    put_u32(out, kBundleVersion);
    put_u64(out, manifest.size());
    out.append(manifest);
    put_values(out, b.text_embeddings.values());
    if (!b.projector.identity) {
        // on disk: in_dim x out_dim row-major
        put_values(out, b.projector.map.weight.transposed().values());
        put_values(out, b.projector.map.bias);
    }
    for (std::size_t l = 0; l < kNumLevels; ++l)
        for (const Record& r : b.records) put_values(out, r.levels[l]);
    if (b.has_embeddings())
        for (const Record& r : b.records) put_values(out, r.embedding);
    return out;
}

FeatureBundle decode_bundle(std::string_view bytes) {
    Reader rd(bytes);
    if (rd.remaining() < kBundleMagic.size() || bytes.substr(0, kBundleMagic.size()) != kBundleMagic) {
        throw BadMagicError("bad magic: not an LDCF bundle");
    }
    rd.take(kBundleMagic.size(), "magic");
    const auto version = static_cast<std::uint32_t>(rd.le(4, "version"));
    if (version != kBundleVersion) {
        throw VersionMismatchError("unsupported bundle version " + std::to_string(version) + " (expected " +
                                   std::to_string(kBundleVersion) + ")");
    }
    const std::uint64_t manifest_len = rd.le(8, "manifest length");
    const auto manifest_text = rd.take(static_cast<std::size_t>(manifest_len), "manifest");
    json j;
    try {
        j = json::parse(manifest_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }

    FeatureBundle b;
    Manifest& m = b.manifest;
    m.num_classes = field<std::size_t>(j, "num_classes");
    m.class_names = field<std::vector<std::string>>(j, "class_names");
    m.level_dims = field<std::array<std::size_t, kNumLevels>>(j, "level_dims");
    m.embed_dim = field<std::size_t>(j, "embed_dim");
    m.temperature = field<double>(j, "temperature");
    m.metadata = j.contains("metadata") ? j.at("metadata") : json::object();

    const json proj = field<json>(j, "projector");
    const bool identity = field<bool>(proj, "identity");
    const auto proj_in = field<std::size_t>(proj, "in_dim");
    const auto proj_out = field<std::size_t>(proj, "out_dim");
    const bool with_embeddings = field<bool>(j, "has_embeddings");

    for (const json& r : field<json>(j, "records")) {
        Record rec;
        rec.id = field<std::string>(r, "id");
        rec.label = field<std::size_t>(r, "label");
        rec.test = r.contains("test") && r.at("test").get<bool>();
        b.records.push_back(std::move(rec));
    }

    b.text_embeddings = Matrix(m.num_classes, m.embed_dim);
    rd.read_values(b.text_embeddings.values(), "text embeddings");
    if (identity) {
        if (proj_in != proj_out) throw ValidationError("identity projector with in_dim != out_dim");
        b.projector = Projector::make_identity(proj_in);
    } else {
        Matrix w(proj_in, proj_out);
        Vector bias(proj_out);
        rd.read_values(w.values(), "projector weight");
        rd.read_values(bias, "projector bias");
        b.projector = Projector::make_affine(w, std::move(bias));
    }
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        for (Record& r : b.records) {
            r.levels[l].assign(m.level_dims[l], 0.0);
            rd.read_values(r.levels[l], "level features");
        }
    }
    if (with_embeddings) {
        for (Record& r : b.records) {
            r.embedding.assign(m.embed_dim, 0.0);
            rd.read_values(r.embedding, "image embeddings");
        }
    }
    if (rd.remaining() != 0) {
        throw ValidationError(std::to_string(rd.remaining()) + " trailing bytes after the declared payload");
    }

    // The declared layout must agree with what was just read.
    const auto expected = payload_layout(b);
    const json& declared = field<json>(j, "arrays");
    if (declared.size() != expected.size()) throw ValidationError("manifest array list does not match payload");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (field<std::string>(declared[i], "name") != expected[i].name ||
            field<std::vector<std::size_t>>(declared[i], "shape") != expected[i].shape) {
            throw ValidationError("manifest array '" + expected[i].name + "' disagrees with payload layout");
        }
    }
    validate(b);
    return b;
}

void write_bundle(const FeatureBundle& bundle, const std::filesystem::path& path) {
    const std::string bytes = encode_bundle(bundle);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

FeatureBundle read_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open bundle '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return decode_bundle(ss.str());
}

Vector image_embedding(const FeatureBundle& bundle, const Record& record) {
    if (!record.embedding.empty()) return record.embedding;
    return bundle.projector.apply(record.levels[3]);
}

EpisodeSplit sample_few_shot(const FeatureBundle& bundle, std::size_t shots, std::uint64_t seed) {
    if (shots == 0) throw ConfigError("shots must be at least 1");
    const std::size_t num_classes = bundle.manifest.num_classes;
    std::vector<std::vector<std::size_t>> pool(num_classes);
    for (std::size_t i = 0; i < bundle.records.size(); ++i) {
        const Record& r = bundle.records[i];
        if (!r.test) pool.at(r.label).push_back(i);
    }
    std::vector<char> chosen(bundle.records.size(), 0);
    EpisodeSplit split;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& p = pool[c];
        if (p.size() < shots) {
            throw InsufficientDataError("class '" + bundle.manifest.class_names[c] + "' has " +
                                        std::to_string(p.size()) + " train records, " + std::to_string(shots) +
                                        " shots requested");
        }
        // partial Fisher-Yates, one independent stream per class
        Rng rng(seed, 0x5348'4f54'0000'0000ULL + c);
        for (std::size_t k = 0; k < shots; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.below(p.size() - k));
            std::swap(p[k], p[j]);
            chosen[p[k]] = 1;
        }
    }
    const bool explicit_test = bundle.has_explicit_test();
    for (std::size_t i = 0; i < bundle.records.size(); ++i) {
        if (chosen[i]) {
            split.train.push_back(i);
        } else if (!explicit_test || bundle.records[i].test) {
            split.test.push_back(i);
        }
    }
    return split;
}

}  // namespace ldc
