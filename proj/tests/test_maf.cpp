#include "grad_util.hpp"

#include "ldc/adapter.hpp"
#include "ldc/error.hpp"
#include "ldc/maf.hpp"

#include <doctest.h>

using namespace ldc;
using test_util::random_vector;

namespace {

auto adapter_params = [](Adapter& a, std::vector<nn::ParamView>& out) { collect_params(a, "a", out); };
auto maf_params = [](MafHead& h, std::vector<nn::ParamView>& out) { collect_params(h, out); };

std::array<Vector, kNumLevels> random_levels(Rng& rng, const std::array<std::size_t, kNumLevels>& dims) {
    std::array<Vector, kNumLevels> out;
    for (std::size_t l = 0; l < kNumLevels; ++l) out[l] = random_vector(rng, dims[l]);
    return out;
}

}  // namespace

TEST_CASE("adapter_forward examples") {
    CHECK(adapter_forward(Vector{1.0, -2.0, 3.0}, Adapter::zeros(3, 2, 4)) == Vector(4, 0.0));

    Adapter one = Adapter::zeros(1, 1, 1);
    one.down.weight(0, 0) = 1.0;
    one.up.weight(0, 0) = 1.0;
    CHECK(adapter_forward(Vector{-5.0}, one) == Vector{0.0});
    CHECK(adapter_forward(Vector{5.0}, one) == Vector{5.0});

    Rng rng(0);
    CHECK(Adapter::make(32, 32, 4, rng).bottleneck() == 8);
    CHECK(Adapter::make(3, 5, 4, rng).bottleneck() == 1);
    const Adapter z = Adapter::make(8, 6, 4, rng, true);
    CHECK(adapter_forward(random_vector(rng, 8), z) == Vector(6, 0.0));
    CHECK_THROWS_AS(adapter_forward(Vector(7, 1.0), z), ShapeError);
}

TEST_CASE("adapter gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const Adapter a = Adapter::make(6, 5, 2, rng);
        const Vector x = random_vector(rng, 6);
        const Vector w = random_vector(rng, 5);
        auto loss = [&](const Adapter& ad) { return dot(w, adapter_forward(x, ad)); };

        AdapterCache cache;
        adapter_forward(x, a, &cache);
        Adapter g = zeros_like(a);
        const Vector dx = adapter_backward(cache, w, a, g);
        CHECK(test_util::max_param_error(a, g, adapter_params, loss) < 1e-6);

        auto loss_x = [&](std::span<const double> xv) { return dot(w, adapter_forward(xv, a)); };
        CHECK(nn::max_relative_error(dx, nn::finite_diff_grad(loss_x, x, 1e-5)) < 1e-6);
    }
}

TEST_CASE("weighted_fusion examples") {
    const std::vector<Vector> basis{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    const Vector out = weighted_fusion(basis, kDefaultBetas);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(kDefaultBetas[i]).epsilon(1e-15));

    const std::vector<Vector> z{{1, 2}, {3, 4}, {5, 6}, {7, 8}};
    const std::array<double, 4> equal{0.25, 0.25, 0.25, 0.25};
    CHECK(weighted_fusion(z, equal) == Vector{4.0, 5.0});

    const std::vector<Vector> same(4, Vector{0.3, -1.7, 2.0});
    const Vector fp = weighted_fusion(same, std::array<double, 4>{0.9, 0.05, 0.3, 2.0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(fp[i] == doctest::Approx(same[0][i]).epsilon(1e-15));

    CHECK_THROWS_AS(weighted_fusion(z, std::array<double, 4>{0, 0, 0, 0}), ConfigError);
    CHECK_THROWS_AS(weighted_fusion(z, std::array<double, 4>{1, -1, 0, 0}), ConfigError);
}

TEST_CASE("weighted_fusion convexity and scale invariance") {
    Rng rng(21);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<Vector> z;
        for (int l = 0; l < 4; ++l) z.push_back(random_vector(rng, 5, 3.0));
        std::array<double, 4> beta;
        for (double& b : beta) b = rng.uniform(0.01, 2.0);
        const Vector out = weighted_fusion(z, beta);
        for (std::size_t i = 0; i < 5; ++i) {
            double lo = z[0][i], hi = z[0][i];
            for (const Vector& v : z) {
                lo = std::min(lo, v[i]);
                hi = std::max(hi, v[i]);
            }
            CHECK(out[i] >= lo - 1e-12);
            CHECK(out[i] <= hi + 1e-12);
        }
        const double c = rng.uniform(0.001, 1000.0);
        std::array<double, 4> scaled;
        for (std::size_t l = 0; l < 4; ++l) scaled[l] = c * beta[l];
        const Vector out2 = weighted_fusion(z, scaled);
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(out2[i] - out[i]) < 1e-12 * (1 + std::abs(out[i])));
    }
}

TEST_CASE("learnable_fusion") {
    const std::vector<Vector> z{{1, 2}, {3, 4}, {5, 6}, {7, 8}};
    CHECK(learnable_fusion(z, Adapter::zeros(8, 2, 2)) == Vector{0.0, 0.0});

    Rng rng(5);
    const Adapter a = Adapter::make(8, 2, 2, rng);
    std::vector<Vector> permuted{z[1], z[0], z[2], z[3]};
    CHECK(learnable_fusion(z, a) != learnable_fusion(permuted, a));

    Vector cat;
    for (const Vector& v : z) cat.insert(cat.end(), v.begin(), v.end());
    CHECK(learnable_fusion(z, a) == adapter_forward(cat, a));
    CHECK_THROWS_AS(learnable_fusion(z, Adapter::zeros(6, 2, 2)), ShapeError);
}

TEST_CASE("maf_forward examples") {
    Rng rng(1);
    const std::array<std::size_t, kNumLevels> dims{5, 6, 7, 8};
    MafHead head = make_maf_head(dims, 3, Projector::make_identity(4), FusionMode::weighted, kDefaultBetas,
                                 {true, true, true, true}, 4, rng);
    head.mlp.weight = Matrix(3, 4);
    head.mlp.bias = {0.5, -1.0, 2.0};
    const auto levels = random_levels(rng, dims);
    CHECK(maf_forward(levels, head).logits == head.mlp.bias);

    MafHead lf = make_maf_head(dims, 3, Projector::make_identity(4), FusionMode::learnable, kDefaultBetas,
                               {true, true, true, true}, 4, rng);
    const MafOutput a = maf_forward(levels, lf), b = maf_forward(levels, lf);
    CHECK(bitwise_equal(a.logits, b.logits));
    CHECK(bitwise_equal(a.z_e, b.z_e));
    CHECK(a.z_e.size() == 4);

    auto bad = levels;
    bad[2].push_back(1.0);
    CHECK_THROWS_AS(maf_forward(bad, head), ShapeError);
}

TEST_CASE("maf gradients match finite differences") {
    const std::array<std::size_t, kNumLevels> dims{6, 8, 5, 7};
    for (FusionMode mode : {FusionMode::weighted, FusionMode::learnable}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(seed);
            Matrix w(6, 5);
            for (double& v : w.values()) v = 0.4 * rng.normal();
            const Projector proj = Projector::make_affine(w, random_vector(rng, 5));
            MafHead head = make_maf_head(dims, 4, proj, mode, kDefaultBetas, {true, true, true, true}, 2, rng);
            test_util::randomize(head, maf_params, rng);
            const auto levels = random_levels(rng, dims);
            const auto y = static_cast<std::size_t>(rng.below(4));
            const Vector ew = random_vector(rng, 5);  // extra linear loss on z_e
            auto loss = [&](const MafHead& h) {
                const MafOutput o = maf_forward(levels, h);
                return nn::cross_entropy(o.logits, y).loss + dot(ew, o.z_e);
            };
            MafCache cache;
            const MafOutput o = maf_forward(levels, head, &cache);
            MafHead g = zeros_like(head);
            maf_backward(cache, nn::cross_entropy(o.logits, y).grad, ew, head, g);
            CHECK(test_util::max_param_error(head, g, maf_params, loss) < 1e-6);
        }
    }
}

TEST_CASE("maf parameters exclude the projector") {
    Rng rng(2);
    Matrix w(4, 4);
    for (double& v : w.values()) v = rng.normal();
    MafHead head = make_maf_head({4, 4, 4, 4}, 3, Projector::make_affine(w, Vector(4, 0.0)), FusionMode::learnable,
                                 kDefaultBetas, {true, true, true, true}, 4, rng);
    std::vector<nn::ParamView> pv;
    collect_params(head, pv);
    for (const auto& p : pv) {
        CHECK(p.name.find("proj") == std::string::npos);
        CHECK(p.values.data() != head.projector.map.weight.values().data());
    }
    CHECK(pv.back().name == "maf.mlp.bias");
}

TEST_CASE("inactive levels are skipped") {
    Rng rng(3);
    const std::array<std::size_t, kNumLevels> dims{4, 4, 4, 4};
    const MafHead head = make_maf_head(dims, 3, Projector::make_identity(4), FusionMode::weighted, kDefaultBetas,
                                       {false, true, false, true}, 4, rng);
    CHECK(head.active_count() == 2);
    auto levels = random_levels(rng, dims);
    const Vector base = maf_forward(levels, head).logits;
    levels[0] = random_vector(rng, 4);
    levels[2] = random_vector(rng, 4);
    CHECK(bitwise_equal(maf_forward(levels, head).logits, base));
    CHECK_THROWS_AS(make_maf_head(dims, 3, Projector::make_identity(4), FusionMode::weighted, kDefaultBetas,
                                  {false, false, false, false}, 4, rng),
                    ConfigError);
}

TEST_CASE("fusion mode parsing") {
    CHECK(parse_fusion_mode("wf") == FusionMode::weighted);
    CHECK(parse_fusion_mode("lf") == FusionMode::learnable);
    CHECK(to_string(FusionMode::learnable) == "lf");
    CHECK_THROWS_AS(parse_fusion_mode("xx"), ConfigError);
}
