#include "ldc/ingest.hpp"

#include "ldc/error.hpp"

#include <fstream>

namespace ldc {

using nlohmann::json;

namespace {

Vector vector_from(const json& j, const std::string& what) {
    if (!j.is_array()) throw ValidationError(what + " must be an array of numbers");
    Vector v;
    v.reserve(j.size());
    for (const json& x : j) {
        if (!x.is_number()) throw ValidationError(what + " contains a non-numeric entry");
        v.push_back(x.get<double>());
    }
    return v;
}

Matrix matrix_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw ValidationError(what + " must be a non-empty array of rows");
    std::vector<double> data;
    const std::size_t cols = j.at(0).size();
    for (std::size_t r = 0; r < j.size(); ++r) {
        Vector row = vector_from(j[r], what + " row " + std::to_string(r));
        if (row.size() != cols) throw ValidationError(what + " is ragged at row " + std::to_string(r));
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(j.size(), cols, std::move(data));
}

json matrix_to(const Matrix& m) {
    json out = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(Vector(m.row(r).begin(), m.row(r).end()));
    return out;
}

}  // namespace

FeatureBundle bundle_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("bundle JSON must be an object");
    for (const char* key : {"class_names", "text_embeddings", "records"})
        if (!j.contains(key)) throw ValidationError(std::string("bundle JSON is missing '") + key + "'");

    FeatureBundle b;
    Manifest& m = b.manifest;
    try {
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
    } catch (const json::exception&) {
        throw ValidationError("class_names must be an array of strings");
    }
    m.num_classes = m.class_names.size();
    if (j.contains("temperature")) m.temperature = j.at("temperature").get<double>();
    if (j.contains("metadata")) m.metadata = j.at("metadata");
    if (!m.metadata.contains("pooling")) m.metadata["pooling"] = "pre-pooled";

    b.text_embeddings = matrix_from(j.at("text_embeddings"), "text_embeddings");
    m.embed_dim = b.text_embeddings.cols();

    const json& recs = j.at("records");
    if (!recs.is_array() || recs.empty()) throw ValidationError("records must be a non-empty array");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const json& r = recs[i];
        Record rec;
        rec.id = r.contains("id") ? r.at("id").get<std::string>() : "record_" + std::to_string(i);
        if (!r.contains("label") || !r.at("label").is_number_integer() || r.at("label").get<long long>() < 0) {
            throw ValidationError("record '" + rec.id + "' needs a non-negative integer label");
        }
        rec.label = r.at("label").get<std::size_t>();
        if (!r.contains("levels") || !r.at("levels").is_array() || r.at("levels").size() != kNumLevels) {
            throw ValidationError("record '" + rec.id + "' must have exactly 4 level feature vectors");
        }
        for (std::size_t l = 0; l < kNumLevels; ++l)
            rec.levels[l] = vector_from(r.at("levels")[l], "record '" + rec.id + "' level " + std::to_string(l + 1));
        if (r.contains("embedding")) rec.embedding = vector_from(r.at("embedding"), "record '" + rec.id + "' embedding");
        rec.test = r.value("test", false);
        b.records.push_back(std::move(rec));
    }
    for (std::size_t l = 0; l < kNumLevels; ++l) m.level_dims[l] = b.records.front().levels[l].size();

    const json proj = j.value("projector", json("identity"));
    if (proj.is_string() && proj.get<std::string>() == "identity") {
        b.projector = Projector::make_identity(m.embed_dim);
    } else if (proj.is_object() && proj.contains("weight") && proj.contains("bias")) {
        b.projector = Projector::make_affine(matrix_from(proj.at("weight"), "projector weight"),
                                             vector_from(proj.at("bias"), "projector bias"));
    } else {
        throw ValidationError("projector must be \"identity\" or an object with weight and bias");
    }
    validate(b);
    return b;
}

json bundle_to_json(const FeatureBundle& b) {
    json j;
    j["class_names"] = b.manifest.class_names;
    j["temperature"] = b.manifest.temperature;
    j["metadata"] = b.manifest.metadata;
    j["text_embeddings"] = matrix_to(b.text_embeddings);
    if (b.projector.identity) {
        j["projector"] = "identity";
    } else {
        j["projector"] = {{"weight", matrix_to(b.projector.map.weight.transposed())}, {"bias", b.projector.map.bias}};
    }
    json recs = json::array();
    for (const Record& r : b.records) {
        json levels = json::array();
        for (const Vector& v : r.levels) levels.push_back(v);
        json rec{{"id", r.id}, {"label", r.label}, {"levels", std::move(levels)}, {"test", r.test}};
        if (!r.embedding.empty()) rec["embedding"] = r.embedding;
        recs.push_back(std::move(rec));
    }
    j["records"] = std::move(recs);
    return j;
}

FeatureBundle ingest_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
    return bundle_from_json(j);
}

json bundle_summary(const FeatureBundle& b) {
    std::vector<std::size_t> per_class(b.manifest.num_classes, 0);
    std::size_t tests = 0;
    for (const Record& r : b.records) {
        ++per_class.at(r.label);
        tests += r.test ? 1 : 0;
    }
    return {{"num_classes", b.manifest.num_classes},
            {"num_records", b.records.size()},
            {"test_records", tests},
            {"records_per_class", per_class},
            {"level_dims", b.manifest.level_dims},
            {"embed_dim", b.manifest.embed_dim},
            {"temperature", b.manifest.temperature},
            {"has_embeddings", b.has_embeddings()},
            {"projector", b.projector.identity ? "identity" : "affine"}};
}

}  // namespace ldc
