#pragma once

#include "ldc/adapter.hpp"

#include <string>
#include <string_view>

namespace ldc {

// Which parts of the deconfusion block are present. Dropping A3 makes A1 and A2
// emit class-sized outputs directly; dropping the residual returns the learned
// term alone instead of adding it to the zero-shot logits.
struct IcdBranches {
    bool a1 = true;
    bool a2 = true;
    bool a3 = true;
    bool residual = true;

    friend bool operator==(const IcdBranches&, const IcdBranches&) = default;
};

// Parses a comma list drawn from {a1, a2, a3, res}; "all" enables everything.
IcdBranches parse_icd_branches(std::string_view text);
std::string to_string(const IcdBranches& b);

// s_ICD = s_ZS + A3(A1(s_ZS) + A2(z_e)).
struct IcdHead {
    IcdBranches branches;
    Adapter a1;  // num_classes -> hidden
    Adapter a2;  // embed_dim -> hidden
    Adapter a3;  // hidden -> num_classes
};

// The adapter feeding the output starts with a zero up-projection, so a fresh
// head with the residual enabled is exactly the identity on s_ZS.
IcdHead make_icd_head(std::size_t num_classes, std::size_t embed_dim, std::size_t hidden, std::size_t reduction,
                      const IcdBranches& branches, Rng& rng);

struct IcdOutput {
    Vector logits;    // s_ICD
    Vector residual;  // learned term added to s_ZS (equals s_ICD - s_ZS when the residual is on)
};

struct IcdCache {
    AdapterCache a1;
    AdapterCache a2;
    AdapterCache a3;
};

IcdOutput icd_forward(std::span<const double> s_zs, std::span<const double> z_e, const IcdHead& head,
                      IcdCache* cache = nullptr);

// Accumulates parameter gradients; returns the gradient w.r.t. z_e. s_ZS is a
// frozen input and receives none.
Vector icd_backward(const IcdCache& cache, std::span<const double> d_logits, std::size_t embed_dim,
                    const IcdHead& head, IcdHead& grad);

void collect_params(IcdHead& head, std::vector<nn::ParamView>& out);
IcdHead zeros_like(const IcdHead& head);

}  // namespace ldc
