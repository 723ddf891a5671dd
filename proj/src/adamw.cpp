#include "ldc/adamw.hpp"

#include "ldc/error.hpp"

#include <cmath>
#include <string>

namespace ldc::nn {

void adamw_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                AdamWState& state) {
    if (params.size() != grads.size()) {
        throw ShapeError("adamw_step: " + std::to_string(params.size()) + " parameter tensors but " +
                         std::to_string(grads.size()) + " gradient tensors");
    }
    if (state.m.empty() && state.t == 0) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size()) {
            throw ShapeError("adamw_step: tensor " + std::to_string(i) + " has " +
                             std::to_string(params[i].size()) + " values, gradient " +
                             std::to_string(grads[i].size()) + ", state " + std::to_string(state.m[i].size()));
        }
    }

    const AdamWConfig& c = state.config;
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        const auto g = grads[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            p[j] -= c.lr * c.weight_decay * p[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

}  // namespace ldc::nn
