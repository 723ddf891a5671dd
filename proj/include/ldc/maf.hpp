#pragma once

#include "ldc/adapter.hpp"
#include "ldc/bundle.hpp"

#include <array>
#include <optional>
#include <string_view>

namespace ldc {

enum class FusionMode { weighted, learnable };

std::string_view to_string(FusionMode mode) noexcept;
FusionMode parse_fusion_mode(std::string_view text);

inline constexpr std::array<double, kNumLevels> kDefaultBetas{0.1, 0.2, 0.3, 0.4};

// (sum_l beta_l z_l) / (sum_l beta_l). Throws ConfigError when sum(beta) <= 0.
Vector weighted_fusion(std::span<const Vector> z, std::span<const double> betas);

// fusion_adapter(concat(z_1, ..., z_n)), concatenated in level order.
Vector learnable_fusion(std::span<const Vector> z, const Adapter& fusion_adapter, AdapterCache* cache = nullptr);

// Multi-level adapter fusion head. Level adapters map each level to the fused
// dim (the projector input); the projector is frozen and never enumerated as a
// trainable parameter.
struct MafHead {
    std::array<Adapter, kNumLevels> level_adapters;
    std::array<bool, kNumLevels> active{true, true, true, true};
    FusionMode fusion = FusionMode::weighted;
    std::array<double, kNumLevels> betas = kDefaultBetas;
    Adapter fusion_adapter;  // learnable fusion only
    Projector projector;
    nn::LinearLayer mlp;     // embed_dim -> num_classes

    std::size_t fused_dim() const noexcept { return projector.in_dim(); }
    std::size_t active_count() const noexcept;
};

MafHead make_maf_head(const std::array<std::size_t, kNumLevels>& level_dims, std::size_t num_classes,
                      const Projector& projector, FusionMode fusion, const std::array<double, kNumLevels>& betas,
                      const std::array<bool, kNumLevels>& active, std::size_t reduction, Rng& rng);

struct MafCache {
    std::array<AdapterCache, kNumLevels> levels;
    AdapterCache fusion;
    Vector z_e;
};

struct MafOutput {
    Vector z_e;     // enhanced feature
    Vector logits;  // s_MAF
};

MafOutput maf_forward(const std::array<Vector, kNumLevels>& levels, const MafHead& head, MafCache* cache = nullptr);

// `d_logits` flows into the MLP, `d_embed` is any additional gradient on z_e
// from downstream consumers (ICD, alpha generator). Either may be empty.
void maf_backward(const MafCache& cache, std::span<const double> d_logits, std::span<const double> d_embed,
                  const MafHead& head, MafHead& grad);

void collect_params(MafHead& head, std::vector<nn::ParamView>& out);
MafHead zeros_like(const MafHead& head);

}  // namespace ldc
