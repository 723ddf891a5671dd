#pragma once

#include "ldc/adamw.hpp"
#include "ldc/bundle.hpp"
#include "ldc/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ldc {

// The five loss terms; each can be dropped independently.
struct LossToggles {
    bool ce_maf = true;
    bool ce_icd = true;
    bool ce_alf = true;
    bool sim_maf = true;
    bool sim_icd = true;

    friend bool operator==(const LossToggles&, const LossToggles&) = default;
};

// Comma list drawn from {ce_maf, ce_icd, ce_alf, sim_maf, sim_icd}; "all" enables every term.
LossToggles parse_loss_toggles(std::string_view text);
std::string to_string(const LossToggles& t);

struct LossTerms {
    double ce_maf = 0.0;
    double ce_icd = 0.0;
    double ce_alf = 0.0;
    double sim_maf = 0.0;
    double sim_icd = 0.0;
    double total = 0.0;
};

struct TotalLoss {
    LossTerms terms;
    StreamGrads grads;  // d(total) w.r.t. s_MAF, s_ICD, s_ALF
};

// CE(s_MAF) + CE(s_ICD) + CE(s_ALF) + lambda * (L1(s_MAF, s_ZS) + L1(s_ICD, s_ZS)).
// Terms whose stream is empty are skipped.
TotalLoss total_loss(std::span<const double> s_maf, std::span<const double> s_icd, std::span<const double> s_alf,
                     std::span<const double> s_zs, std::size_t label, double lambda, const LossToggles& toggles);

// One precomputed training example: levels, image embedding, frozen s_ZS, label.
struct Example {
    const std::array<Vector, kNumLevels>* levels = nullptr;
    std::span<const double> image_emb;
    std::span<const double> s_zs;
    std::size_t label = 0;
};

struct BatchResult {
    LossTerms terms;  // summed over the batch
    LdcModel grad;    // gradient of the batch-mean total loss
};

// Mean total loss over `batch` and its gradient w.r.t. every trainable tensor.
// Examples are processed in fixed chunks and reduced in order, so the result
// does not depend on `threads`.
BatchResult batch_gradient(const LdcModel& model, std::span<const Example> batch, double lambda,
                           const LossToggles& toggles, std::size_t threads = 1);

double batch_mean_loss(const LdcModel& model, std::span<const Example> batch, double lambda,
                       const LossToggles& toggles);

struct TrainConfig {
    std::size_t shots = 16;
    std::uint64_t seed = 0;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double lambda = 1.0;
    std::optional<double> temperature;  // overrides the bundle manifest when set
    LossToggles losses;

    bool use_maf = true;
    bool use_icd = true;
    FusionMode fusion = FusionMode::weighted;
    std::array<double, kNumLevels> betas = kDefaultBetas;
    std::array<bool, kNumLevels> levels{true, true, true, true};
    std::size_t reduction = 4;
    std::size_t icd_hidden = 256;
    IcdBranches icd_branches;
    AlfStrategy alf;

    // 0 = use every available core, still capped by LDC_THREADS.
    std::size_t threads = 0;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

ModelConfig model_config_for(const FeatureBundle& bundle, const TrainConfig& config);

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    LossTerms mean_terms;
};

struct TrainResult {
    LdcModel model;
    std::vector<EpochStats> trace;
};

// Zero-shot distributions for every record of the bundle.
std::vector<Vector> zero_shot_table(const FeatureBundle& bundle, double temperature);

TrainResult train(const FeatureBundle& bundle, const EpisodeSplit& split, const TrainConfig& config);

struct EvalReport {
    StreamKind stream = StreamKind::alf;
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<std::size_t> class_counts;
    std::vector<double> per_class_accuracy;          // NaN for classes with no test records
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    // Mean over classes of the off-diagonal mass of the class-averaged softmax distribution.
    double confusion_score = 0.0;
};

// Ties in argmax resolve to the lowest class index.
std::size_t argmax(std::span<const double> v);

EvalReport evaluate(const FeatureBundle& bundle, std::span<const std::size_t> indices, const LdcModel& model,
                    StreamKind stream, std::size_t threads = 0);

nlohmann::json to_json(const EvalReport& report);
std::string confusion_csv(const EvalReport& report, std::span<const std::string> class_names);
nlohmann::json to_json(const std::vector<EpochStats>& trace);

// Worker count after applying LDC_THREADS. `requested` == 0 means hardware concurrency.
std::size_t resolve_threads(std::size_t requested);

}  // namespace ldc
