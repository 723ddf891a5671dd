#pragma once

#include <cstdint>

namespace ldc {

// splitmix64 finalizer; also used as a stateless counter hash.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mix64(mix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

// Small portable generator. The standard distributions are implementation-defined,
// so uniform/normal draws are computed here to keep results identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : counter_(derive_key(seed, stream)) {}

    std::uint64_t next_u64() noexcept {
        counter_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = counter_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling removes modulo bias.
    std::uint64_t below(std::uint64_t n) noexcept;

    // Standard normal via Box-Muller (no cached second value).
    double normal() noexcept;

private:
    std::uint64_t counter_;
};

}  // namespace ldc
