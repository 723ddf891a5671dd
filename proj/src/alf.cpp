#include "ldc/alf.hpp"

#include "ldc/error.hpp"

#include <sstream>

namespace ldc {

AlphaGenerator AlphaGenerator::make(std::size_t embed_dim, Rng& rng) {
    return AlphaGenerator{nn::LinearLayer::uniform_init(embed_dim, 1, rng)};
}

double alpha_gen(std::span<const double> z_e, const AlphaGenerator& g) {
    return nn::sigmoid(nn::linear_forward(z_e, g.linear)[0]);
}

Vector alpha_backward(std::span<const double> z_e, double alpha, double d_alpha, const AlphaGenerator& g,
                      AlphaGenerator& grad) {
    const double d_pre[1] = {d_alpha * alpha * (1.0 - alpha)};
    return nn::linear_backward(z_e, d_pre, g.linear, grad.linear);
}

Vector alf_fuse(std::span<const double> s_maf, std::span<const double> s_icd, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ContractError("alf_fuse: alpha must lie strictly inside (0, 1)");
    }
    if (s_maf.size() != s_icd.size()) throw ShapeError("alf_fuse: logits have different lengths");
    Vector out(s_maf.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * s_maf[i] + (1.0 - alpha) * s_icd[i];
    return out;
}

AlfStrategy parse_alf_strategy(std::string_view text) {
    using K = AlfStrategy::Kind;
    if (text == "adaptive") return {K::adaptive, 0.5};
    if (text == "icd-only") return {K::icd_only, 0.5};
    if (text == "maf-only") return {K::maf_only, 0.5};
    if (text == "sum") return {K::sum, 0.5};
    if (text.starts_with("fixed:")) {
        const std::string value(text.substr(6));
        double v = 0.0;
        std::size_t used = 0;
        try {
            v = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != value.size() || value.empty()) throw ConfigError("bad fixed alpha '" + value + "'");
        if (!(v > 0.0 && v < 1.0)) throw ConfigError("fixed alpha must lie strictly inside (0, 1)");
        return {K::fixed, v};
    }
    throw ConfigError("unknown ALF strategy '" + std::string(text) +
                      "' (expected adaptive, icd-only, maf-only, sum, fixed:<v>)");
}

std::string to_string(const AlfStrategy& s) {
    using K = AlfStrategy::Kind;
    switch (s.kind) {
        case K::adaptive: return "adaptive";
        case K::icd_only: return "icd-only";
        case K::maf_only: return "maf-only";
        case K::sum: return "sum";
        case K::fixed: {
            std::ostringstream os;
            os.precision(17);
            os << "fixed:" << s.fixed_alpha;
            return os.str();
        }
    }
    return "adaptive";
}

void collect_params(AlphaGenerator& g, std::vector<nn::ParamView>& out) {
    nn::collect_params(g.linear, "alf.alpha", out);
}

}  // namespace ldc
