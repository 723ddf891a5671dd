#pragma once

#include "ldc/bundle.hpp"
#include "ldc/model.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>

namespace ldc {

// Parameters of a synthetic bundle with known inter-class confusion.
//
// Each class c has an image prototype u_c (orthonormal set in the embedding
// space). Text embeddings are built so that <u_c, t_k> / |t_k| is proportional
// to margin * [c == k] + confusion(c, k) with a common norm for every t_k, so
// the zero-shot argmax of a clean class-c image is argmax_k of that row.
struct SynthSpec {
    std::size_t num_classes = 10;
    std::array<std::size_t, kNumLevels> level_dims{32, 32, 32, 32};
    std::size_t embed_dim = 32;
    std::size_t samples_per_class = 100;
    double margin = 1.0;
    Matrix confusion;  // num_classes x num_classes, zero diagonal, nonnegative
    double noise = 0.3;
    double feature_scale = 30.0;  // multiplies level features and image embeddings
    std::uint64_t seed = 0;
    double temperature = 100.0;
    double test_fraction = 0.5;  // per class, the trailing records form the test partition
};

// C = 10 with five planted flips (0->1, 2->3, 4->5, 6->7, 8->9) and weaker
// non-flipping confusions elsewhere.
SynthSpec default_synth_spec();

// Confusion matrix with the given entries and zeros elsewhere.
Matrix planted_confusion(std::size_t num_classes,
                         std::initializer_list<std::tuple<std::size_t, std::size_t, double>> entries);

void validate(const SynthSpec& spec);
nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthTruth {
    std::array<Matrix, kNumLevels> level_prototypes;  // num_classes x level_dim
    Matrix image_prototypes;                           // num_classes x embed_dim
    Matrix confusion;
    Matrix expected_similarity;  // clean cosine of class-c image vs text k
    std::vector<std::size_t> flipped_classes;
};

nlohmann::json to_json(const SynthTruth& truth);
SynthTruth synth_truth_from_json(const nlohmann::json& j);

struct SynthResult {
    FeatureBundle bundle;
    SynthTruth truth;
};

SynthResult gen_synthetic(const SynthSpec& spec);

// Fraction of `indices` whose nearest prototype (cosine over the concatenated
// levels) is the true class. No learning involved.
double nearest_prototype_accuracy(const FeatureBundle& bundle,
                                  const std::array<Matrix, kNumLevels>& prototypes,
                                  std::span<const std::size_t> indices);

double zero_shot_accuracy(const FeatureBundle& bundle, std::span<const std::size_t> indices);

// Throws UndefinedCorrelationError when either input is constant.
double pearson(std::span<const double> a, std::span<const double> b);

// Row c: the negated ICD residual averaged over class-c records among `indices`.
Matrix recovered_confusion(const LdcModel& model, const FeatureBundle& bundle, std::span<const std::size_t> indices);

// Pearson correlation between the off-diagonal entries of the planted matrix and
// of recovered_confusion().
double confusion_recovery_score(const LdcModel& model, const FeatureBundle& bundle, const Matrix& planted,
                                std::span<const std::size_t> indices);

struct OracleReport {
    double prototype_accuracy = 0.0;
    double zs_accuracy = 0.0;
    std::optional<double> recovery_correlation;
};

OracleReport oracle_report(const FeatureBundle& bundle, const SynthTruth& truth, std::span<const std::size_t> indices,
                           const LdcModel* model = nullptr);

nlohmann::json to_json(const OracleReport& r);

}  // namespace ldc
