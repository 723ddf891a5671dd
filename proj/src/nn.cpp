#include "ldc/nn.hpp"

#include "ldc/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ldc::nn {

namespace {

void require_finite(std::span<const double> v, const char* what) {
    if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

LinearLayer LinearLayer::zeros(std::size_t in_dim, std::size_t out_dim) {
    return LinearLayer{Matrix(out_dim, in_dim), Vector(out_dim, 0.0)};
}

LinearLayer LinearLayer::uniform_init(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    LinearLayer layer = zeros(in_dim, out_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in_dim, 1)));
    for (double& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    return layer;
}

Vector linear_forward(std::span<const double> x, const LinearLayer& layer) {
    if (x.size() != layer.in_dim()) {
        throw ShapeError("linear_forward: input has dim " + std::to_string(x.size()) + ", layer expects " +
                         std::to_string(layer.in_dim()));
    }
    Vector y(layer.bias);
    for (std::size_t r = 0; r < layer.out_dim(); ++r) {
        const auto w = layer.weight.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
        y[r] += s;
    }
    return y;
}

Vector linear_backward(std::span<const double> x, std::span<const double> dy, const LinearLayer& layer,
                       LinearLayer& grad) {
    if (x.size() != layer.in_dim() || dy.size() != layer.out_dim()) {
        throw ShapeError("linear_backward: got x dim " + std::to_string(x.size()) + " and dy dim " +
                         std::to_string(dy.size()) + " for a " + std::to_string(layer.out_dim()) + "x" +
                         std::to_string(layer.in_dim()) + " layer");
    }
    Vector dx(x.size(), 0.0);
    for (std::size_t r = 0; r < layer.out_dim(); ++r) {
        const double g = dy[r];
        if (g == 0.0) continue;
        const auto w = layer.weight.row(r);
        auto gw = grad.weight.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) {
            gw[c] += g * x[c];
            dx[c] += g * w[c];
        }
        grad.bias[r] += g;
    }
    return dx;
}

Vector relu(std::span<const double> x) {
    Vector y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
    return y;
}

Vector relu_backward(std::span<const double> pre, std::span<const double> dy) {
    if (pre.size() != dy.size()) throw ShapeError("relu_backward: length mismatch");
    Vector dx(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector softmax(std::span<const double> v) {
    require_finite(v, "softmax");
    if (v.empty()) return {};
    const double mx = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& o : out) o /= sum;
    return out;
}

Vector log_softmax(std::span<const double> v) {
    require_finite(v, "log_softmax");
    if (v.empty()) return {};
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
}

LossGrad cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
    }
    const Vector logp = log_softmax(logits);
    LossGrad out{-logp[label], Vector(logits.size())};
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logp[i]);
    out.grad[label] -= 1.0;
    return out;
}

LossGrad l1_loss(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("l1_loss: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    LossGrad out{0.0, Vector(a.size())};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        out.loss += std::abs(d);
        out.grad[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    }
    return out;
}

void collect_params(LinearLayer& layer, const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + ".weight", layer.weight.values()});
    out.push_back({prefix + ".bias", layer.bias});
}

}  // namespace ldc::nn
