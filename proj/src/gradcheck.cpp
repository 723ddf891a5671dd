#include "ldc/gradcheck.hpp"

#include "ldc/error.hpp"

#include <algorithm>
#include <cmath>

namespace ldc::nn {

Vector finite_diff_grad(const ScalarFn& f, std::span<const double> x, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
    Vector probe(x.begin(), x.end());
    Vector grad(x.size(), 0.0);
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double relative_error(double analytic, double numeric, double floor) noexcept {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    return worst;
}

}  // namespace ldc::nn
