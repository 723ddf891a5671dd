#pragma once

#include "ldc/nn.hpp"

namespace ldc {

// Bottleneck block: up(relu(down(x))). No internal skip connection.
struct Adapter {
    nn::LinearLayer down;
    nn::LinearLayer up;

    // Bottleneck width is max(1, in_dim / reduction). With `zero_up` the up
    // projection starts at exactly zero, so the adapter initially outputs 0.
    static Adapter make(std::size_t in_dim, std::size_t out_dim, std::size_t reduction, Rng& rng,
                        bool zero_up = false);
    static Adapter zeros(std::size_t in_dim, std::size_t bottleneck, std::size_t out_dim);

    std::size_t in_dim() const noexcept { return down.in_dim(); }
    std::size_t bottleneck() const noexcept { return down.out_dim(); }
    std::size_t out_dim() const noexcept { return up.out_dim(); }

    friend bool operator==(const Adapter&, const Adapter&) = default;
};

struct AdapterCache {
    Vector input;
    Vector pre;     // down(x)
    Vector hidden;  // relu(pre)
};

Vector adapter_forward(std::span<const double> x, const Adapter& a, AdapterCache* cache = nullptr);

// Accumulates parameter gradients into `grad`; returns the gradient w.r.t. the input.
Vector adapter_backward(const AdapterCache& cache, std::span<const double> dy, const Adapter& a, Adapter& grad);

void collect_params(Adapter& a, const std::string& prefix, std::vector<nn::ParamView>& out);

Adapter zeros_like(const Adapter& a);

}  // namespace ldc
