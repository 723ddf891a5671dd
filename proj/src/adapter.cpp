#include "ldc/adapter.hpp"

#include "ldc/error.hpp"

#include <algorithm>

namespace ldc {

Adapter Adapter::make(std::size_t in_dim, std::size_t out_dim, std::size_t reduction, Rng& rng, bool zero_up) {
    if (in_dim == 0 || out_dim == 0) throw ConfigError("adapter dims must be positive");
    if (reduction == 0) throw ConfigError("adapter reduction must be positive");
    const std::size_t hidden = std::max<std::size_t>(1, in_dim / reduction);
    Adapter a;
    a.down = nn::LinearLayer::uniform_init(in_dim, hidden, rng);
    a.up = zero_up ? nn::LinearLayer::zeros(hidden, out_dim) : nn::LinearLayer::uniform_init(hidden, out_dim, rng);
    return a;
}

Adapter Adapter::zeros(std::size_t in_dim, std::size_t bottleneck, std::size_t out_dim) {
    if (bottleneck == 0) throw ConfigError("adapter bottleneck must be at least 1");
    return Adapter{nn::LinearLayer::zeros(in_dim, bottleneck), nn::LinearLayer::zeros(bottleneck, out_dim)};
}

Vector adapter_forward(std::span<const double> x, const Adapter& a, AdapterCache* cache) {
    if (x.size() != a.in_dim()) {
        throw ShapeError("adapter_forward: input dim " + std::to_string(x.size()) + ", adapter expects " +
                         std::to_string(a.in_dim()));
    }
    Vector pre = nn::linear_forward(x, a.down);
    Vector hidden = nn::relu(pre);
    Vector out = nn::linear_forward(hidden, a.up);
    if (cache != nullptr) {
        cache->input.assign(x.begin(), x.end());
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
    }
    return out;
}

Vector adapter_backward(const AdapterCache& cache, std::span<const double> dy, const Adapter& a, Adapter& grad) {
    const Vector d_hidden = nn::linear_backward(cache.hidden, dy, a.up, grad.up);
    const Vector d_pre = nn::relu_backward(cache.pre, d_hidden);
    return nn::linear_backward(cache.input, d_pre, a.down, grad.down);
}

void collect_params(Adapter& a, const std::string& prefix, std::vector<nn::ParamView>& out) {
    nn::collect_params(a.down, prefix + ".down", out);
    nn::collect_params(a.up, prefix + ".up", out);
}

Adapter zeros_like(const Adapter& a) {
    if (a.bottleneck() == 0) return Adapter{};
    return Adapter::zeros(a.in_dim(), a.bottleneck(), a.out_dim());
}

}  // namespace ldc
