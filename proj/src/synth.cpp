#include "ldc/synth.hpp"

#include "ldc/error.hpp"
#include "ldc/rng.hpp"
#include "ldc/training.hpp"
#include "ldc/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ldc {

using nlohmann::json;

Matrix planted_confusion(std::size_t num_classes,
                         std::initializer_list<std::tuple<std::size_t, std::size_t, double>> entries) {
    Matrix m(num_classes, num_classes);
    for (const auto& [from, to, value] : entries) m(from, to) = value;
    return m;
}

SynthSpec default_synth_spec() {
    SynthSpec s;
    s.confusion = planted_confusion(10, {{0, 1, 1.6}, {2, 3, 1.5}, {4, 5, 1.4}, {6, 7, 1.5}, {8, 9, 1.3},
                                         {1, 0, 0.5}, {3, 2, 0.3}, {5, 6, 0.6}, {7, 8, 0.4}, {9, 0, 0.5},
                                         {1, 4, 0.2}, {3, 8, 0.4}, {5, 2, 0.3}, {7, 6, 0.2}, {9, 4, 0.3}});
    return s;
}

void validate(const SynthSpec& s) {
    if (s.num_classes < 2) throw ConfigError("synthetic spec needs at least two classes");
    if (s.embed_dim < 2 * s.num_classes) {
        throw ConfigError("synthetic spec needs embed_dim >= 2 * num_classes (" + std::to_string(2 * s.num_classes) +
                          "), got " + std::to_string(s.embed_dim));
    }
    for (std::size_t d : s.level_dims)
        if (d == 0) throw ConfigError("synthetic level dims must be positive");
    if (s.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
    if (!(s.margin > 0.0)) throw ConfigError("margin must be positive");
    if (!(s.noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(s.feature_scale > 0.0)) throw ConfigError("feature_scale must be positive");
    if (!(s.temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(s.test_fraction >= 0.0 && s.test_fraction < 1.0)) throw ConfigError("test_fraction must be in [0, 1)");
    if (s.confusion.rows() != s.num_classes || s.confusion.cols() != s.num_classes) {
        throw ConfigError("confusion matrix must be num_classes x num_classes");
    }
    for (std::size_t i = 0; i < s.num_classes; ++i) {
        if (s.confusion(i, i) != 0.0) throw ConfigError("confusion matrix diagonal must be zero");
        for (std::size_t j = 0; j < s.num_classes; ++j) {
            if (!(s.confusion(i, j) >= 0.0) || !std::isfinite(s.confusion(i, j))) {
                throw ConfigError("confusion matrix entries must be finite and nonnegative");
            }
        }
    }
}

namespace {

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw ConfigError("ragged matrix in JSON");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

// Orthonormal rows via modified Gram-Schmidt on Gaussian draws.
Matrix random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
    Matrix basis(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
        auto row = basis.row(i);
        double norm = 0.0;
        while (norm < 1e-6) {
            for (double& v : row) v = rng.normal();
            for (std::size_t k = 0; k < i; ++k) {
                const double proj = dot(row, basis.row(k));
                for (std::size_t d = 0; d < dim; ++d) row[d] -= proj * basis(k, d);
            }
            norm = l2_norm(row);
        }
        for (double& v : row) v /= norm;
    }
    return basis;
}

}  // namespace

json to_json(const SynthSpec& s) {
    return json{{"num_classes", s.num_classes},
                {"level_dims", s.level_dims},
                {"embed_dim", s.embed_dim},
                {"samples_per_class", s.samples_per_class},
                {"margin", s.margin},
                {"confusion", matrix_json(s.confusion)},
                {"noise", s.noise},
                {"feature_scale", s.feature_scale},
                {"seed", s.seed},
                {"temperature", s.temperature},
                {"test_fraction", s.test_fraction}};
}

SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec s = default_synth_spec();
    try {
        s.num_classes = j.value("num_classes", s.num_classes);
        if (j.contains("level_dims")) s.level_dims = j.at("level_dims").get<std::array<std::size_t, kNumLevels>>();
        s.embed_dim = j.value("embed_dim", s.embed_dim);
        s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
        s.margin = j.value("margin", s.margin);
        s.noise = j.value("noise", s.noise);
        s.feature_scale = j.value("feature_scale", s.feature_scale);
        s.seed = j.value("seed", s.seed);
        s.temperature = j.value("temperature", s.temperature);
        s.test_fraction = j.value("test_fraction", s.test_fraction);
        if (j.contains("confusion")) {
            s.confusion = matrix_from_json(j.at("confusion"));
        } else if (s.num_classes != s.confusion.rows()) {
            s.confusion = Matrix(s.num_classes, s.num_classes);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed synthetic spec: ") + e.what());
    }
    validate(s);
    return s;
}

json to_json(const SynthTruth& t) {
    json levels = json::array();
    for (const Matrix& m : t.level_prototypes) levels.push_back(matrix_json(m));
    return json{{"level_prototypes", levels},
                {"image_prototypes", matrix_json(t.image_prototypes)},
                {"confusion", matrix_json(t.confusion)},
                {"expected_similarity", matrix_json(t.expected_similarity)},
                {"flipped_classes", t.flipped_classes}};
}

SynthTruth synth_truth_from_json(const json& j) {
    SynthTruth t;
    try {
        const json& levels = j.at("level_prototypes");
        if (levels.size() != kNumLevels) throw ConfigError("ground truth must hold four level prototype sets");
        for (std::size_t l = 0; l < kNumLevels; ++l) t.level_prototypes[l] = matrix_from_json(levels[l]);
        t.image_prototypes = matrix_from_json(j.at("image_prototypes"));
        t.confusion = matrix_from_json(j.at("confusion"));
        t.expected_similarity = matrix_from_json(j.at("expected_similarity"));
        t.flipped_classes = j.at("flipped_classes").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed ground truth: ") + e.what());
    }
    return t;
}

SynthResult gen_synthetic(const SynthSpec& spec) {
    validate(spec);
    const std::size_t n = spec.num_classes;
    const std::size_t de = spec.embed_dim;
    Rng rng(spec.seed, 0x53594e5448ULL);

    SynthResult out;
    SynthTruth& truth = out.truth;
    truth.confusion = spec.confusion;

    // u_0..u_{n-1} carry class identity, u_n..u_{2n-1} pad text norms.
    const Matrix basis = random_orthonormal(2 * n, de, rng);
    truth.image_prototypes = Matrix(n, de);
    for (std::size_t c = 0; c < n; ++c)
        std::copy(basis.row(c).begin(), basis.row(c).end(), truth.image_prototypes.row(c).begin());

    // Column k of G = margin * I + M gives text k's coordinates along u_0..u_{n-1}.
    Matrix g(n, n);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < n; ++k) g(c, k) = (c == k ? spec.margin : 0.0) + spec.confusion(c, k);
    std::vector<double> col_norm(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += g(c, k) * g(c, k);
        col_norm[k] = std::sqrt(s);
    }
    const double common = *std::max_element(col_norm.begin(), col_norm.end());

    FeatureBundle& b = out.bundle;
    b.text_embeddings = Matrix(n, de);
    for (std::size_t k = 0; k < n; ++k) {
        auto t = b.text_embeddings.row(k);
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t d = 0; d < de; ++d) t[d] += g(c, k) * basis(c, d);
        const double pad = std::sqrt(std::max(0.0, common * common - col_norm[k] * col_norm[k]));
        for (std::size_t d = 0; d < de; ++d) t[d] += pad * basis(n + k, d);
    }
    truth.expected_similarity = Matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < n; ++k) truth.expected_similarity(c, k) = g(c, k) / common;
        if (argmax(truth.expected_similarity.row(c)) != c) truth.flipped_classes.push_back(c);
    }

    for (std::size_t l = 0; l < kNumLevels; ++l) {
        Matrix& p = truth.level_prototypes[l];
        p = Matrix(n, spec.level_dims[l]);
        for (double& v : p.values()) v = spec.margin * rng.normal();
    }

    b.manifest.num_classes = n;
    for (std::size_t c = 0; c < n; ++c) b.manifest.class_names.push_back("class_" + std::to_string(c));
    b.manifest.level_dims = spec.level_dims;
    b.manifest.embed_dim = de;
    b.manifest.temperature = spec.temperature;
    b.manifest.metadata = json{{"generator", "planted-confusion"}, {"pooling", "pre-pooled"}, {"spec", to_json(spec)}};
    b.projector = Projector::make_identity(de);

    const auto test_count =
        static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(spec.samples_per_class)));
    const double embed_noise = spec.noise / std::sqrt(static_cast<double>(de));
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
            Record r;
            r.id = "c" + std::to_string(c) + "_" + std::to_string(i);
            r.label = c;
            r.test = i >= spec.samples_per_class - test_count;
            for (std::size_t l = 0; l < kNumLevels; ++l) {
                const auto proto = truth.level_prototypes[l].row(c);
                r.levels[l].resize(proto.size());
                for (std::size_t d = 0; d < proto.size(); ++d) r.levels[l][d] = spec.feature_scale * (proto[d] + spec.noise * rng.normal());
            }
            r.embedding.resize(de);
            for (std::size_t d = 0; d < de; ++d)
                r.embedding[d] = spec.feature_scale * spec.margin * (basis(c, d) + embed_noise * rng.normal());
            b.records.push_back(std::move(r));
        }
    }
    validate(b);
    return out;
}

double nearest_prototype_accuracy(const FeatureBundle& bundle, const std::array<Matrix, kNumLevels>& prototypes,
                                  std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("nearest_prototype_accuracy: no records");
    const std::size_t n = bundle.manifest.num_classes;
    std::vector<Vector> protos(n);
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (prototypes[l].rows() != n || prototypes[l].cols() != bundle.manifest.level_dims[l]) {
            throw ShapeError("prototype set for level " + std::to_string(l + 1) + " does not match the bundle");
        }
        for (std::size_t c = 0; c < n; ++c) protos[c].insert(protos[c].end(), prototypes[l].row(c).begin(), prototypes[l].row(c).end());
    }
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        const Record& r = bundle.records.at(idx);
        Vector x;
        for (const Vector& lv : r.levels) x.insert(x.end(), lv.begin(), lv.end());
        Vector sims(n);
        for (std::size_t c = 0; c < n; ++c) sims[c] = cosine_sim(x, protos[c]);
        if (argmax(sims) == r.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double zero_shot_accuracy(const FeatureBundle& bundle, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("zero_shot_accuracy: no records");
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        const Record& r = bundle.records.at(idx);
        const auto zs = zs_logits(image_embedding(bundle, r), bundle.text_embeddings, bundle.manifest.temperature);
        if (argmax(zs.logits) == r.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need two equal-length vectors of size >= 2");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelationError("pearson: correlation undefined for a constant vector");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Matrix recovered_confusion(const LdcModel& model, const FeatureBundle& bundle, std::span<const std::size_t> indices) {
    if (!model.config.use_icd) throw ConfigError("recovered_confusion needs a model with ICD enabled");
    const std::size_t n = bundle.manifest.num_classes;
    Matrix out(n, n);
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t idx : indices) {
        const Record& r = bundle.records.at(idx);
        const Vector emb = image_embedding(bundle, r);
        const Vector zs = zs_logits(emb, bundle.text_embeddings, model.config.temperature).logits;
        const Streams s = model_forward(model, r.levels, emb, zs);
        for (std::size_t k = 0; k < n; ++k) out(r.label, k) -= s.icd_residual[k];
        counts[r.label] += 1;
    }
    for (std::size_t c = 0; c < n; ++c) {
        if (counts[c] == 0) continue;
        for (std::size_t k = 0; k < n; ++k) out(c, k) /= static_cast<double>(counts[c]);
    }
    return out;
}

double confusion_recovery_score(const LdcModel& model, const FeatureBundle& bundle, const Matrix& planted,
                                std::span<const std::size_t> indices) {
    const std::size_t n = bundle.manifest.num_classes;
    if (planted.rows() != n || planted.cols() != n) throw ShapeError("planted confusion matrix has the wrong shape");
    const Matrix rec = recovered_confusion(model, bundle, indices);
    Vector a, b;
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < n; ++k) {
            if (c == k) continue;
            a.push_back(planted(c, k));
            b.push_back(rec(c, k));
        }
    }
    return pearson(a, b);
}

OracleReport oracle_report(const FeatureBundle& bundle, const SynthTruth& truth, std::span<const std::size_t> indices,
                           const LdcModel* model) {
    OracleReport r;
    r.prototype_accuracy = nearest_prototype_accuracy(bundle, truth.level_prototypes, indices);
    r.zs_accuracy = zero_shot_accuracy(bundle, indices);
    if (model != nullptr && model->config.use_icd) {
        r.recovery_correlation = confusion_recovery_score(*model, bundle, truth.confusion, indices);
    }
    return r;
}

json to_json(const OracleReport& r) {
    return json{{"prototype_accuracy", r.prototype_accuracy},
                {"zs_accuracy", r.zs_accuracy},
                {"recovery_correlation", r.recovery_correlation ? json(*r.recovery_correlation) : json(nullptr)}};
}

}  // namespace ldc
