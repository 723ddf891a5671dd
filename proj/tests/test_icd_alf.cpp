#include "grad_util.hpp"

#include "ldc/alf.hpp"
#include "ldc/error.hpp"
#include "ldc/icd.hpp"

#include <doctest.h>

using namespace ldc;
using test_util::random_vector;

namespace {

auto icd_params = [](IcdHead& h, std::vector<nn::ParamView>& out) { collect_params(h, out); };
auto alpha_params = [](AlphaGenerator& g, std::vector<nn::ParamView>& out) { collect_params(g, out); };

Vector random_simplex(Rng& rng, std::size_t n) {
    Vector v = random_vector(rng, n, 2.0);
    return nn::softmax(v);
}

}  // namespace

TEST_CASE("fresh icd head is the identity on s_ZS") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const IcdHead head = make_icd_head(10, 16, 32, 4, IcdBranches{}, rng);
        const Vector s = random_simplex(rng, 10);
        const IcdOutput o = icd_forward(s, random_vector(rng, 16), head);
        CHECK(bitwise_equal(o.logits, s));
        CHECK(o.residual == Vector(10, 0.0));
    }
}

TEST_CASE("all-zero icd head is the identity") {
    Rng rng(0);
    IcdHead head = make_icd_head(4, 3, 5, 2, IcdBranches{}, rng);
    head = zeros_like(head);
    const Vector s{0.1, 0.2, 0.3, 0.4};
    CHECK(bitwise_equal(icd_forward(s, Vector{1.0, 2.0, 3.0}, head).logits, s));
}

TEST_CASE("icd offset is image independent without A2") {
    Rng rng(8);
    IcdHead head = make_icd_head(5, 6, 12, 2, IcdBranches{}, rng);
    test_util::randomize(head, icd_params, rng, 0.8);
    head.a2 = zeros_like(head.a2);
    const Vector uniform(5, 0.2);
    const IcdOutput first = icd_forward(uniform, random_vector(rng, 6), head);
    for (int i = 0; i < 20; ++i) {
        const IcdOutput o = icd_forward(uniform, random_vector(rng, 6, 5.0), head);
        CHECK(bitwise_equal(o.residual, first.residual));
    }
    bool nonzero = false;
    for (double r : first.residual) nonzero = nonzero || r != 0.0;
    CHECK(nonzero);
}

TEST_CASE("icd residual equals s_ICD minus s_ZS") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        IcdHead head = make_icd_head(6, 4, 8, 2, IcdBranches{}, rng);
        test_util::randomize(head, icd_params, rng);
        const Vector s = random_simplex(rng, 6);
        const IcdOutput o = icd_forward(s, random_vector(rng, 4), head);
        for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(o.logits[k] - s[k] - o.residual[k]) < 1e-12);
    }
}

TEST_CASE("icd gradients match finite differences") {
    const std::vector<std::string> variants{"all", "a1,a2,a3", "a1,a3,res", "a2,a3,res", "a1,a2,res", "a2,res"};
    for (const std::string& v : variants) {
        CAPTURE(v);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            IcdHead head = make_icd_head(5, 6, 10, 2, parse_icd_branches(v), rng);
            test_util::randomize(head, icd_params, rng);
            const Vector s = random_simplex(rng, 5);
            const Vector z = random_vector(rng, 6);
            const auto y = static_cast<std::size_t>(rng.below(5));
            auto loss = [&](const IcdHead& h) { return nn::cross_entropy(icd_forward(s, z, h).logits, y).loss; };
            IcdCache cache;
            const IcdOutput o = icd_forward(s, z, head, &cache);
            IcdHead g = zeros_like(head);
            const Vector dz = icd_backward(cache, nn::cross_entropy(o.logits, y).grad, 6, head, g);
            CHECK(test_util::max_param_error(head, g, icd_params, loss) < 1e-6);

            auto loss_z = [&](std::span<const double> zv) {
                return nn::cross_entropy(icd_forward(s, zv, head).logits, y).loss;
            };
            CHECK(nn::max_relative_error(dz, nn::finite_diff_grad(loss_z, z, 1e-5)) < 1e-6);
        }
    }
}

TEST_CASE("icd response to z_e is Lipschitz along the A2 path") {
    Rng rng(30);
    IcdHead head = make_icd_head(4, 5, 6, 2, IcdBranches{}, rng);
    test_util::randomize(head, icd_params, rng);
    auto op_norm = [](const Matrix& m) {
        // Frobenius norm bounds the spectral norm from above.
        return l2_norm(m.values());
    };
    const double lip = op_norm(head.a2.down.weight) * op_norm(head.a2.up.weight) * op_norm(head.a3.down.weight) *
                       op_norm(head.a3.up.weight);
    const Vector s = random_simplex(rng, 4);
    for (int i = 0; i < 200; ++i) {
        const Vector z = random_vector(rng, 5);
        Vector z2 = z;
        const Vector delta = random_vector(rng, 5, 0.1);
        for (std::size_t k = 0; k < 5; ++k) z2[k] += delta[k];
        const Vector a = icd_forward(s, z, head).logits, b = icd_forward(s, z2, head).logits;
        Vector diff(4);
        for (std::size_t k = 0; k < 4; ++k) diff[k] = a[k] - b[k];
        CHECK(l2_norm(diff) <= lip * l2_norm(delta) + 1e-12);
    }
}

TEST_CASE("icd branch parsing") {
    CHECK(parse_icd_branches("all") == IcdBranches{});
    const IcdBranches b = parse_icd_branches("a2,res");
    CHECK_FALSE(b.a1);
    CHECK(b.a2);
    CHECK_FALSE(b.a3);
    CHECK(b.residual);
    CHECK(to_string(IcdBranches{}) == "a1,a2,a3,res");
    CHECK_THROWS_AS(parse_icd_branches("a4"), ConfigError);
    CHECK_THROWS_AS(parse_icd_branches("a3,res"), ConfigError);
}

TEST_CASE("alpha generator") {
    AlphaGenerator g;
    g.linear = nn::LinearLayer::zeros(4, 1);
    CHECK(alpha_gen(Vector{1.0, 2.0, 3.0, 4.0}, g) == 0.5);
    g.linear.bias[0] = 30.0;
    CHECK(alpha_gen(Vector{1.0, 2.0, 3.0, 4.0}, g) > 1.0 - 1e-9);
    CHECK_THROWS_AS(alpha_gen(Vector{1.0}, g), ShapeError);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        AlphaGenerator gen = AlphaGenerator::make(6, rng);
        const Vector z = random_vector(rng, 6);
        const double w = rng.normal();
        auto loss = [&](const AlphaGenerator& a) { return w * alpha_gen(z, a); };
        const double alpha = alpha_gen(z, gen);
        AlphaGenerator grad;
        grad.linear = nn::LinearLayer::zeros(6, 1);
        const Vector dz = alpha_backward(z, alpha, w, gen, grad);
        CHECK(test_util::max_param_error(gen, grad, alpha_params, loss) < 1e-6);
        auto loss_z = [&](std::span<const double> zv) { return w * alpha_gen(zv, gen); };
        CHECK(nn::max_relative_error(dz, nn::finite_diff_grad(loss_z, z, 1e-5)) < 1e-6);
    }
}

TEST_CASE("alf_fuse") {
    const Vector m{1.0, -2.0, 3.0}, i{3.0, 2.0, -1.0};
    CHECK(alf_fuse(m, i, 0.5) == Vector{2.0, 0.0, 1.0});
    CHECK(alf_fuse(m, m, 0.123) == m);
    const Vector hi = alf_fuse(m, i, 1.0 - 1e-9), lo = alf_fuse(m, i, 1e-9);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(hi[k] - m[k]) < 1e-6);
        CHECK(std::abs(lo[k] - i[k]) < 1e-6);
    }
    CHECK_THROWS_AS(alf_fuse(m, i, 0.0), ContractError);
    CHECK_THROWS_AS(alf_fuse(m, i, 1.0), ContractError);
    CHECK_THROWS_AS(alf_fuse(m, i, 1.5), ContractError);
    CHECK_THROWS_AS(alf_fuse(m, Vector{1.0}, 0.5), ShapeError);
}

TEST_CASE("alf betweenness") {
    Rng rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
        const Vector m = random_vector(rng, 7, 3.0), i = random_vector(rng, 7, 3.0);
        const double a = rng.uniform(1e-6, 1.0 - 1e-6);
        const Vector s = alf_fuse(m, i, a);
        for (std::size_t k = 0; k < 7; ++k) {
            CHECK(s[k] >= std::min(m[k], i[k]));
            CHECK(s[k] <= std::max(m[k], i[k]));
        }
    }
}

TEST_CASE("alf strategy parsing") {
    CHECK(parse_alf_strategy("adaptive").kind == AlfStrategy::Kind::adaptive);
    CHECK(parse_alf_strategy("icd-only").kind == AlfStrategy::Kind::icd_only);
    CHECK(parse_alf_strategy("maf-only").kind == AlfStrategy::Kind::maf_only);
    CHECK(parse_alf_strategy("sum").kind == AlfStrategy::Kind::sum);
    const AlfStrategy f = parse_alf_strategy("fixed:0.25");
    CHECK(f.kind == AlfStrategy::Kind::fixed);
    CHECK(f.fixed_alpha == 0.25);
    CHECK(to_string(f) == "fixed:0.25");
    CHECK_THROWS_AS(parse_alf_strategy("fixed:1.0"), ConfigError);
    CHECK_THROWS_AS(parse_alf_strategy("fixed:abc"), ConfigError);
    CHECK_THROWS_AS(parse_alf_strategy("mean"), ConfigError);
}
