#pragma once

#include "ldc/rng.hpp"
#include "ldc/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ldc::nn {

// y = W x + b with W stored out x in.
struct LinearLayer {
    Matrix weight;
    Vector bias;

    static LinearLayer zeros(std::size_t in_dim, std::size_t out_dim);
    // U(-1/sqrt(in), 1/sqrt(in)) for weight and bias, the usual dense-layer default.
    static LinearLayer uniform_init(std::size_t in_dim, std::size_t out_dim, Rng& rng);

    std::size_t in_dim() const noexcept { return weight.cols(); }
    std::size_t out_dim() const noexcept { return weight.rows(); }

    friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

Vector linear_forward(std::span<const double> x, const LinearLayer& layer);

// Accumulates dW += dy x^T and db += dy into `grad`; returns W^T dy.
Vector linear_backward(std::span<const double> x, std::span<const double> dy, const LinearLayer& layer,
                       LinearLayer& grad);

Vector relu(std::span<const double> x);
// d relu at exactly zero is taken as 0.
Vector relu_backward(std::span<const double> pre, std::span<const double> dy);

double sigmoid(double x) noexcept;

Vector softmax(std::span<const double> v);
Vector log_softmax(std::span<const double> v);

struct LossGrad {
    double loss = 0.0;
    Vector grad;  // with respect to the first argument
};

// Consumes raw scores; log-softmax is fused for stability.
LossGrad cross_entropy(std::span<const double> logits, std::size_t label);

// Sum-reduced |a - b| with subgradient sign(a - b), sign(0) = 0.
LossGrad l1_loss(std::span<const double> a, std::span<const double> b);

// A named, mutable view of one parameter tensor. Used to enumerate model
// parameters in a fixed order for the optimizer and the gradient checker.
struct ParamView {
    std::string name;
    std::span<double> values;
};

void collect_params(LinearLayer& layer, const std::string& prefix, std::vector<ParamView>& out);

}  // namespace ldc::nn
