#pragma once

#include "ldc/nn.hpp"
#include "ldc/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ldc {

inline constexpr std::size_t kNumLevels = 4;
inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::string_view kBundleMagic = "LDCF";

// Frozen map from the fused feature space to the embedding space. Either the
// identity (in_dim == out_dim) or an affine map stored as in_dim x out_dim.
struct Projector {
    bool identity = true;
    std::size_t dim = 0;   // used when identity
    nn::LinearLayer map;   // out_dim x in_dim internally; used when !identity

    static Projector make_identity(std::size_t dim);
    // `weight` is in_dim x out_dim, matching the on-disk layout.
    static Projector make_affine(const Matrix& weight, Vector bias);

    std::size_t in_dim() const noexcept { return identity ? dim : map.in_dim(); }
    std::size_t out_dim() const noexcept { return identity ? dim : map.out_dim(); }

    Vector apply(std::span<const double> x) const;
    // Gradient with respect to the input only; the projector never trains.
    Vector backward_input(std::span<const double> dy) const;

    friend bool operator==(const Projector&, const Projector&) = default;
};

struct Manifest {
    std::size_t num_classes = 0;
    std::vector<std::string> class_names;
    std::array<std::size_t, kNumLevels> level_dims{};
    std::size_t embed_dim = 0;
    double temperature = 100.0;
    // Free-form creation metadata (source, pooling of level features, generator spec, ...).
    nlohmann::json metadata = nlohmann::json::object();
};

struct Record {
    std::string id;
    std::size_t label = 0;
    std::array<Vector, kNumLevels> levels;
    Vector embedding;        // precomputed final image embedding; empty when absent
    bool test = false;       // member of the bundle's explicit test partition
};

struct FeatureBundle {
    Manifest manifest;
    std::vector<Record> records;
    Matrix text_embeddings;  // num_classes x embed_dim
    Projector projector;

    bool has_embeddings() const noexcept;
    bool has_explicit_test() const noexcept;
};

// Throws ValidationError naming the offending record or field.
void validate(const FeatureBundle& bundle);

// Field-by-field comparison with doubles compared by bit pattern.
bool identical(const FeatureBundle& a, const FeatureBundle& b);

std::string encode_bundle(const FeatureBundle& bundle);
FeatureBundle decode_bundle(std::string_view bytes);

void write_bundle(const FeatureBundle& bundle, const std::filesystem::path& path);
FeatureBundle read_bundle(const std::filesystem::path& path);

// Image embedding used for zero-shot scoring: the precomputed one when present,
// otherwise the projector applied to the level-4 feature.
Vector image_embedding(const FeatureBundle& bundle, const Record& record);

struct EpisodeSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Draws exactly `shots` records per class from the train pool (records not in
// the explicit test partition). The test set is the explicit partition when the
// bundle declares one, otherwise every record that was not drawn.
EpisodeSplit sample_few_shot(const FeatureBundle& bundle, std::size_t shots, std::uint64_t seed);

}  // namespace ldc
