#pragma once

#include "ldc/alf.hpp"
#include "ldc/bundle.hpp"
#include "ldc/icd.hpp"
#include "ldc/maf.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>

namespace ldc {

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelConfig {
    std::size_t num_classes = 0;
    std::size_t embed_dim = 0;
    std::array<std::size_t, kNumLevels> level_dims{};
    double temperature = 100.0;

    bool use_maf = true;
    bool use_icd = true;
    FusionMode fusion = FusionMode::weighted;
    std::array<double, kNumLevels> betas = kDefaultBetas;
    std::array<bool, kNumLevels> levels{true, true, true, true};
    std::size_t reduction = 4;
    std::size_t icd_hidden = 256;
    IcdBranches icd_branches;
    AlfStrategy alf;
};

// Checks internal consistency (module toggles vs ALF strategy, dims, weights).
void validate(const ModelConfig& config);

// All learnable parameters plus the frozen projector (inside `maf`).
struct LdcModel {
    ModelConfig config;
    MafHead maf;
    IcdHead icd;
    AlphaGenerator alpha;

    bool uses_alpha() const noexcept;

    // Trainable tensors in a fixed order. The projector is never included.
    std::vector<nn::ParamView> trainable();
};

LdcModel init_model(const ModelConfig& config, const Projector& projector, std::uint64_t seed);
LdcModel zeros_like(const LdcModel& model);

bool identical_params(const LdcModel& a, const LdcModel& b);

// One image's per-branch logits. Streams for disabled modules are empty.
struct Streams {
    Vector zs;
    Vector maf;
    Vector icd;
    Vector icd_residual;
    Vector alf;
    Vector z_e;
    double alpha = 0.5;
};

struct ForwardCache {
    MafCache maf;
    IcdCache icd;
};

// `image_emb` stands in for z_e when MAF is disabled. `s_zs` is the frozen
// zero-shot distribution for this image.
Streams model_forward(const LdcModel& model, const std::array<Vector, kNumLevels>& levels,
                      std::span<const double> image_emb, std::span<const double> s_zs,
                      ForwardCache* cache = nullptr);

struct StreamGrads {
    Vector maf;
    Vector icd;
    Vector alf;
};

void model_backward(const LdcModel& model, const ForwardCache& cache, const Streams& streams,
                    const StreamGrads& grads, LdcModel& grad);

enum class StreamKind { zs, maf, icd, alf };
std::string_view to_string(StreamKind s) noexcept;
StreamKind parse_stream(std::string_view text);
const Vector& select(const Streams& s, StreamKind kind);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const LdcModel& model);
LdcModel model_from_json(const nlohmann::json& j);
void save_model(const LdcModel& model, const std::filesystem::path& path);
LdcModel load_model(const std::filesystem::path& path);

}  // namespace ldc
