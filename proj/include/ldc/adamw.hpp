#pragma once

#include "ldc/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ldc::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Moments are allocated lazily on the first step, one buffer per parameter tensor.
struct AdamWState {
    AdamWConfig config;
    std::vector<Vector> m;
    std::vector<Vector> v;
    std::uint64_t t = 0;
};

// Decoupled weight decay (p -= lr * wd * p) followed by the bias-corrected Adam update.
void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                AdamWState& state);

}  // namespace ldc::nn
