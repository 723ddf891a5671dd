#include "ldc/model_check.hpp"

#include "ldc/error.hpp"
#include "ldc/gradcheck.hpp"
#include "ldc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ldc {

GradCheckReport check_gradients(const LdcModel& model, std::span<const Example> batch, double lambda,
                                const LossToggles& toggles, double eps) {
    BatchResult analytic = batch_gradient(model, batch, lambda, toggles);
    const auto grad_views = analytic.grad.trainable();

    LdcModel probe = model;
    auto views = probe.trainable();
    GradCheckReport report;
    for (std::size_t t = 0; t < views.size(); ++t) {
        std::span<double> values = views[t].values;
        const Vector original(values.begin(), values.end());
        const nn::ScalarFn f = [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), values.begin());
            return batch_mean_loss(probe, batch, lambda, toggles);
        };
        const Vector numeric = nn::finite_diff_grad(f, original, eps);
        std::copy(original.begin(), original.end(), values.begin());
        const double err = nn::max_relative_error(grad_views[t].values, numeric);
        report.tensors.push_back({views[t].name, values.size(), err});
        report.max_rel_error = std::max(report.max_rel_error, err);
    }
    return report;
}

void randomize_params(LdcModel& model, std::uint64_t seed, double scale) {
    Rng rng(seed, 0x52414e44ULL);
    for (auto& p : model.trainable())
        for (double& v : p.values) v = rng.uniform(-scale, scale);
}

std::vector<Example> ExampleStore::examples() const {
    std::vector<Example> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({&levels[i], image_emb[i], s_zs[i], labels[i]});
    return out;
}

ExampleStore random_examples(const ModelConfig& config, std::size_t count, std::uint64_t seed) {
    Rng rng(seed, 0x4558414dULL);
    ExampleStore store;
    for (std::size_t i = 0; i < count; ++i) {
        std::array<Vector, kNumLevels> lv;
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            lv[l].resize(config.level_dims[l]);
            for (double& v : lv[l]) v = rng.normal();
        }
        Vector emb(config.embed_dim);
        for (double& v : emb) v = rng.normal();
        Vector raw(config.num_classes);
        for (double& v : raw) v = 3.0 * rng.normal();
        store.levels.push_back(std::move(lv));
        store.image_emb.push_back(std::move(emb));
        store.s_zs.push_back(nn::softmax(raw));
        store.labels.push_back(static_cast<std::size_t>(rng.below(config.num_classes)));
    }
    return store;
}

ModelConfig gradient_suite_config(FusionMode fusion) {
    ModelConfig c;
    c.num_classes = 6;
    c.embed_dim = 8;
    c.level_dims = {8, 12, 8, 16};
    c.reduction = 2;
    c.icd_hidden = 12;
    c.fusion = fusion;
    return c;
}

Projector random_projector(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    Rng rng(seed, 0x50524f4aULL);
    Matrix w(in_dim, out_dim);
    for (double& v : w.values()) v = rng.normal() / std::sqrt(static_cast<double>(in_dim));
    Vector b(out_dim);
    for (double& v : b) v = 0.1 * rng.normal();
    return Projector::make_affine(w, std::move(b));
}

GradSuiteReport run_gradient_suite(std::size_t seeds, double lambda, const LossToggles& toggles) {
    GradSuiteReport out;
    std::map<std::string, TensorCheck> worst;
    for (FusionMode mode : {FusionMode::weighted, FusionMode::learnable}) {
        const ModelConfig c = gradient_suite_config(mode);
        for (std::uint64_t seed = 0; seed < seeds; ++seed) {
            LdcModel m = init_model(c, random_projector(10, c.embed_dim, seed), seed);
            randomize_params(m, seed);
            const ExampleStore store = random_examples(c, 4, seed);
            const auto batch = store.examples();
            for (const TensorCheck& t : check_gradients(m, batch, lambda, toggles).tensors) {
                auto [it, fresh] = worst.try_emplace(t.name, t);
                if (!fresh) it->second.max_rel_error = std::max(it->second.max_rel_error, t.max_rel_error);
                out.max_rel_error = std::max(out.max_rel_error, t.max_rel_error);
            }
            ++out.runs;
        }
    }
    for (auto& [name, t] : worst) out.tensors.push_back(t);
    return out;
}

nlohmann::json to_json(const GradSuiteReport& r) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const TensorCheck& t : r.tensors)
        tensors.push_back({{"name", t.name}, {"size", t.size}, {"max_rel_error", t.max_rel_error}});
    return {{"runs", r.runs}, {"max_rel_error", r.max_rel_error}, {"tensors", tensors}};
}

}  // namespace ldc
