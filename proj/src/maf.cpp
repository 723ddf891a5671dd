#include "ldc/maf.hpp"

#include "ldc/error.hpp"

#include <algorithm>
#include <numeric>

namespace ldc {

std::string_view to_string(FusionMode mode) noexcept {
    return mode == FusionMode::weighted ? "wf" : "lf";
}

FusionMode parse_fusion_mode(std::string_view text) {
    if (text == "wf") return FusionMode::weighted;
    if (text == "lf") return FusionMode::learnable;
    throw ConfigError("unknown fusion mode '" + std::string(text) + "' (expected wf or lf)");
}

Vector weighted_fusion(std::span<const Vector> z, std::span<const double> betas) {
    if (z.empty()) throw ShapeError("weighted_fusion: no inputs");
    if (z.size() != betas.size()) {
        throw ShapeError("weighted_fusion: " + std::to_string(z.size()) + " inputs but " +
                         std::to_string(betas.size()) + " weights");
    }
    const double total = std::accumulate(betas.begin(), betas.end(), 0.0);
    if (!(total > 0.0)) throw ConfigError("weighted_fusion: fusion weights must sum to a positive value");
    Vector out(z.front().size(), 0.0);
    for (std::size_t l = 0; l < z.size(); ++l) {
        if (z[l].size() != out.size()) throw ShapeError("weighted_fusion: inputs have different dims");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += betas[l] * z[l][i];
    }
    for (double& o : out) o /= total;
    return out;
}

Vector learnable_fusion(std::span<const Vector> z, const Adapter& fusion_adapter, AdapterCache* cache) {
    Vector cat;
    for (const Vector& v : z) cat.insert(cat.end(), v.begin(), v.end());
    if (cat.size() != fusion_adapter.in_dim()) {
        throw ShapeError("learnable_fusion: concatenated dim " + std::to_string(cat.size()) +
                         ", fusion adapter expects " + std::to_string(fusion_adapter.in_dim()));
    }
    return adapter_forward(cat, fusion_adapter, cache);
}

std::size_t MafHead::active_count() const noexcept {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

MafHead make_maf_head(const std::array<std::size_t, kNumLevels>& level_dims, std::size_t num_classes,
                      const Projector& projector, FusionMode fusion, const std::array<double, kNumLevels>& betas,
                      const std::array<bool, kNumLevels>& active, std::size_t reduction, Rng& rng) {
    MafHead head;
    head.active = active;
    head.fusion = fusion;
    head.betas = betas;
    head.projector = projector;
    if (head.active_count() == 0) throw ConfigError("at least one feature level must be active");
    if (fusion == FusionMode::weighted) {
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (active[l] && !(betas[l] > 0.0)) throw ConfigError("fusion weights must be positive");
        }
    }
    const std::size_t fused = projector.in_dim();
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        // inactive levels keep a correctly shaped but unused adapter
        head.level_adapters[l] = Adapter::make(level_dims[l], fused, reduction, rng);
    }
    if (fusion == FusionMode::learnable) {
        head.fusion_adapter = Adapter::make(head.active_count() * fused, fused, reduction, rng);
    }
    head.mlp = nn::LinearLayer::uniform_init(projector.out_dim(), num_classes, rng);
    return head;
}

MafOutput maf_forward(const std::array<Vector, kNumLevels>& levels, const MafHead& head, MafCache* cache) {
    std::vector<Vector> z;
    std::vector<double> betas;
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (!head.active[l]) continue;
        if (levels[l].size() != head.level_adapters[l].in_dim()) {
            throw ShapeError("maf_forward: level " + std::to_string(l + 1) + " has dim " +
                             std::to_string(levels[l].size()) + ", head expects " +
                             std::to_string(head.level_adapters[l].in_dim()));
        }
        z.push_back(adapter_forward(levels[l], head.level_adapters[l], cache ? &cache->levels[l] : nullptr));
        betas.push_back(head.betas[l]);
    }
    const Vector fused = head.fusion == FusionMode::weighted
                             ? weighted_fusion(z, betas)
                             : learnable_fusion(z, head.fusion_adapter, cache ? &cache->fusion : nullptr);
    MafOutput out;
    out.z_e = head.projector.apply(fused);
    out.logits = nn::linear_forward(out.z_e, head.mlp);
    if (cache != nullptr) cache->z_e = out.z_e;
    return out;
}

void maf_backward(const MafCache& cache, std::span<const double> d_logits, std::span<const double> d_embed,
                  const MafHead& head, MafHead& grad) {
    Vector dz(cache.z_e.size(), 0.0);
    if (!d_logits.empty()) dz = nn::linear_backward(cache.z_e, d_logits, head.mlp, grad.mlp);
    if (!d_embed.empty()) {
        if (d_embed.size() != dz.size()) throw ShapeError("maf_backward: embedding gradient dim mismatch");
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += d_embed[i];
    }
    const Vector d_fused = head.projector.backward_input(dz);

    const std::size_t fused = head.fused_dim();
    if (head.fusion == FusionMode::weighted) {
        double total = 0.0;
        for (std::size_t l = 0; l < kNumLevels; ++l)
            if (head.active[l]) total += head.betas[l];
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (!head.active[l]) continue;
            Vector dzl(d_fused);
            for (double& v : dzl) v *= head.betas[l] / total;
            adapter_backward(cache.levels[l], dzl, head.level_adapters[l], grad.level_adapters[l]);
        }
    } else {
        const Vector d_cat = adapter_backward(cache.fusion, d_fused, head.fusion_adapter, grad.fusion_adapter);
        std::size_t offset = 0;
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (!head.active[l]) continue;
            std::span<const double> dzl(d_cat.data() + offset, fused);
            adapter_backward(cache.levels[l], dzl, head.level_adapters[l], grad.level_adapters[l]);
            offset += fused;
        }
    }
}

void collect_params(MafHead& head, std::vector<nn::ParamView>& out) {
    for (std::size_t l = 0; l < kNumLevels; ++l) {
        if (head.active[l]) collect_params(head.level_adapters[l], "maf.level" + std::to_string(l + 1), out);
    }
    if (head.fusion == FusionMode::learnable) collect_params(head.fusion_adapter, "maf.fusion", out);
    nn::collect_params(head.mlp, "maf.mlp", out);
}

MafHead zeros_like(const MafHead& head) {
    MafHead g = head;
    for (auto& a : g.level_adapters) a = zeros_like(a);
    g.fusion_adapter = zeros_like(head.fusion_adapter);
    g.mlp = nn::LinearLayer::zeros(head.mlp.in_dim(), head.mlp.out_dim());
    return g;
}

}  // namespace ldc
