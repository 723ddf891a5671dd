#pragma once

#include "ldc/gradcheck.hpp"
#include "ldc/nn.hpp"
#include "ldc/rng.hpp"

#include <algorithm>
#include <vector>

namespace test_util {

inline ldc::Vector random_vector(ldc::Rng& rng, std::size_t n, double scale = 1.0) {
    ldc::Vector v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

template <class T, class Collect>
std::vector<ldc::nn::ParamView> views(T& obj, Collect collect) {
    std::vector<ldc::nn::ParamView> out;
    collect(obj, out);
    return out;
}

// Largest relative error between `analytic` (gradient object of the same type
// as `params`) and central differences of `loss` over every enumerated tensor.
template <class T, class Collect, class Loss>
double max_param_error(T params, T analytic, Collect collect, Loss loss, double eps = 1e-5) {
    auto pv = views(params, collect);
    auto gv = views(analytic, collect);
    double worst = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const ldc::Vector original(pv[i].values.begin(), pv[i].values.end());
        auto f = [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), pv[i].values.begin());
            return loss(static_cast<const T&>(params));
        };
        const ldc::Vector numeric = ldc::nn::finite_diff_grad(f, original, eps);
        std::copy(original.begin(), original.end(), pv[i].values.begin());
        worst = std::max(worst, ldc::nn::max_relative_error(gv[i].values, numeric));
    }
    return worst;
}

template <class T, class Collect>
void randomize(T& obj, Collect collect, ldc::Rng& rng, double scale = 0.5) {
    for (auto& p : views(obj, collect))
        for (double& v : p.values) v = rng.uniform(-scale, scale);
}

}  // namespace test_util
