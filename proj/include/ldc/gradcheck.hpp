#pragma once

#include "ldc/tensor.hpp"

#include <functional>
#include <span>

namespace ldc::nn {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps for every coordinate.
Vector finite_diff_grad(const ScalarFn& f, std::span<const double> x, double eps);

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
// turning round-off into large ratios.
double relative_error(double analytic, double numeric, double floor = 1e-4) noexcept;

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-4);

}  // namespace ldc::nn
