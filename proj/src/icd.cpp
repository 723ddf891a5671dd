#include "ldc/icd.hpp"

#include "ldc/error.hpp"

#include <sstream>

namespace ldc {

IcdBranches parse_icd_branches(std::string_view text) {
    if (text == "all") return {};
    IcdBranches b{false, false, false, false};
    std::string item;
    std::istringstream ss{std::string(text)};
    while (std::getline(ss, item, ',')) {
        if (item == "a1") b.a1 = true;
        else if (item == "a2") b.a2 = true;
        else if (item == "a3") b.a3 = true;
        else if (item == "res") b.residual = true;
        else throw ConfigError("unknown ICD branch '" + item + "' (expected a1, a2, a3, res)");
    }
    if (!b.a1 && !b.a2) throw ConfigError("ICD needs at least one of a1, a2");
    return b;
}

std::string to_string(const IcdBranches& b) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(b.a1, "a1");
    add(b.a2, "a2");
    add(b.a3, "a3");
    add(b.residual, "res");
    return out;
}

IcdHead make_icd_head(std::size_t num_classes, std::size_t embed_dim, std::size_t hidden, std::size_t reduction,
                      const IcdBranches& branches, Rng& rng) {
    if (!branches.a1 && !branches.a2) throw ConfigError("ICD needs at least one of a1, a2");
    if (hidden == 0) throw ConfigError("ICD hidden dim must be positive");
    IcdHead head;
    head.branches = branches;
    const std::size_t mid = branches.a3 ? hidden : num_classes;
    const bool zero_first_stage = !branches.a3;
    if (branches.a1) head.a1 = Adapter::make(num_classes, mid, reduction, rng, zero_first_stage);
    if (branches.a2) head.a2 = Adapter::make(embed_dim, mid, reduction, rng, zero_first_stage);
    if (branches.a3) head.a3 = Adapter::make(hidden, num_classes, reduction, rng, /*zero_up=*/true);
    return head;
}

IcdOutput icd_forward(std::span<const double> s_zs, std::span<const double> z_e, const IcdHead& head,
                      IcdCache* cache) {
    const IcdBranches& b = head.branches;
    Vector mid;
    if (b.a1) mid = adapter_forward(s_zs, head.a1, cache ? &cache->a1 : nullptr);
    if (b.a2) {
        Vector prior = adapter_forward(z_e, head.a2, cache ? &cache->a2 : nullptr);
        if (mid.empty()) {
            mid = std::move(prior);
        } else {
            for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += prior[i];
        }
    }
    IcdOutput out;
    out.residual = b.a3 ? adapter_forward(mid, head.a3, cache ? &cache->a3 : nullptr) : std::move(mid);
    if (out.residual.size() != s_zs.size()) {
        throw ShapeError("icd_forward: residual dim " + std::to_string(out.residual.size()) + ", logits dim " +
                         std::to_string(s_zs.size()));
    }
    out.logits = out.residual;
    if (b.residual) {
        for (std::size_t i = 0; i < s_zs.size(); ++i) out.logits[i] = s_zs[i] + out.residual[i];
    }
    return out;
}

Vector icd_backward(const IcdCache& cache, std::span<const double> d_logits, std::size_t embed_dim,
                    const IcdHead& head, IcdHead& grad) {
    const IcdBranches& b = head.branches;
    const Vector d_mid = b.a3 ? adapter_backward(cache.a3, d_logits, head.a3, grad.a3)
                              : Vector(d_logits.begin(), d_logits.end());
    if (b.a1) adapter_backward(cache.a1, d_mid, head.a1, grad.a1);
    if (b.a2) return adapter_backward(cache.a2, d_mid, head.a2, grad.a2);
    return Vector(embed_dim, 0.0);
}

void collect_params(IcdHead& head, std::vector<nn::ParamView>& out) {
    if (head.branches.a1) collect_params(head.a1, "icd.a1", out);
    if (head.branches.a2) collect_params(head.a2, "icd.a2", out);
    if (head.branches.a3) collect_params(head.a3, "icd.a3", out);
}

IcdHead zeros_like(const IcdHead& head) {
    IcdHead g;
    g.branches = head.branches;
    g.a1 = zeros_like(head.a1);
    g.a2 = zeros_like(head.a2);
    g.a3 = zeros_like(head.a3);
    return g;
}

}  // namespace ldc
