#pragma once

#include "ldc/model.hpp"
#include "ldc/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ldc {

struct TensorCheck {
    std::string name;
    std::size_t size = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
};

// Compares batch_gradient against central differences of batch_mean_loss for
// every trainable scalar.
GradCheckReport check_gradients(const LdcModel& model, std::span<const Example> batch, double lambda,
                                const LossToggles& toggles, double eps = 1e-5);

// Randomizes every trainable tensor (including the zero-initialized ICD output
// projection) so gradients are probed away from the residual-identity kink.
void randomize_params(LdcModel& model, std::uint64_t seed, double scale = 0.5);

struct ExampleStore {
    std::vector<std::array<Vector, kNumLevels>> levels;
    std::vector<Vector> image_emb;
    std::vector<Vector> s_zs;
    std::vector<std::size_t> labels;

    std::vector<Example> examples() const;
};

// Random inputs shaped for `config`; s_ZS is a random point on the simplex.
ExampleStore random_examples(const ModelConfig& config, std::size_t count, std::uint64_t seed);

// Small model shape used by the gradient suite: 6 classes, d_e = 8, levels
// {8, 12, 8, 16}, affine 10 -> 8 projector.
ModelConfig gradient_suite_config(FusionMode fusion);
Projector random_projector(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

struct GradSuiteReport {
    std::vector<TensorCheck> tensors;  // worst error per tensor name over all runs
    double max_rel_error = 0.0;
    std::size_t runs = 0;
};

// Checks `seeds` randomized models for each fusion mode on 4-example batches.
GradSuiteReport run_gradient_suite(std::size_t seeds, double lambda, const LossToggles& toggles);
nlohmann::json to_json(const GradSuiteReport& report);

}  // namespace ldc
