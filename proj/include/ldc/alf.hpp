#pragma once

#include "ldc/nn.hpp"

#include <string>
#include <string_view>

namespace ldc {

// alpha = sigmoid(w . z_e + b), strictly inside (0, 1).
struct AlphaGenerator {
    nn::LinearLayer linear;  // embed_dim -> 1

    static AlphaGenerator make(std::size_t embed_dim, Rng& rng);
};

double alpha_gen(std::span<const double> z_e, const AlphaGenerator& g);

// Returns the gradient w.r.t. z_e given d(loss)/d(alpha); accumulates into `grad`.
Vector alpha_backward(std::span<const double> z_e, double alpha, double d_alpha, const AlphaGenerator& g,
                      AlphaGenerator& grad);

// alpha * s_MAF + (1 - alpha) * s_ICD. Throws ContractError unless 0 < alpha < 1.
Vector alf_fuse(std::span<const double> s_maf, std::span<const double> s_icd, double alpha);

// How the final logits are formed from s_MAF and s_ICD. `adaptive` uses the
// alpha generator; `fixed` uses a constant weight on s_MAF; `sum` adds the two.
struct AlfStrategy {
    enum class Kind { adaptive, fixed, icd_only, maf_only, sum };
    Kind kind = Kind::adaptive;
    double fixed_alpha = 0.5;

    friend bool operator==(const AlfStrategy&, const AlfStrategy&) = default;
};

// Accepts adaptive | icd-only | maf-only | sum | fixed:<v>.
AlfStrategy parse_alf_strategy(std::string_view text);
std::string to_string(const AlfStrategy& s);

void collect_params(AlphaGenerator& g, std::vector<nn::ParamView>& out);

}  // namespace ldc
