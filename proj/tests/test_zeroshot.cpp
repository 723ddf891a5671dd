#include "ldc/error.hpp"
#include "ldc/rng.hpp"
#include "ldc/training.hpp"
#include "ldc/zeroshot.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace ldc;

TEST_CASE("cosine_sim examples") {
    CHECK(cosine_sim(Vector{3.0, 4.0}, Vector{3.0, 4.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_sim(Vector{1.0, 0.0}, Vector{0.0, 1.0}) == 0.0);
    CHECK(cosine_sim(Vector{1.0, 0.0}, Vector{1.0, 1.0}) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_sim(Vector{0.0, 0.0}, Vector{1.0, 1.0}), DegenerateVectorError);
    CHECK_THROWS_AS(cosine_sim(Vector{1.0}, Vector{1.0, 1.0}), ShapeError);
}

TEST_CASE("zs_logits examples") {
    Matrix texts(3, 3, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
    const ZeroShotScores s = zs_logits(Vector{0.0, 1.0, 0.0}, texts, 100.0);
    CHECK(s.logits[1] > 0.99);
    CHECK(s.similarities == Vector{0.0, 1.0, 0.0});

    Matrix same(4, 2, {1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0});
    for (double p : zs_logits(Vector{0.3, -1.0}, same, 100.0).logits) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(4);
    Matrix rnd(5, 6);
    for (double& v : rnd.values()) v = rng.normal();
    Vector img(6);
    for (double& v : img) v = rng.normal();
    for (double p : zs_logits(img, rnd, 1e-12).logits) CHECK(std::abs(p - 0.2) < 1e-9);

    CHECK_THROWS_AS(zs_logits(img, rnd, 0.0), ConfigError);
}

TEST_CASE("zs_logits names the degenerate class") {
    Matrix texts(2, 2, {1.0, 0.0, 0.0, 0.0});
    const std::vector<std::string> names{"cat", "dog"};
    try {
        zs_logits(Vector{1.0, 1.0}, texts, 100.0, names);
        FAIL("expected DegenerateVectorError");
    } catch (const DegenerateVectorError& e) {
        CHECK(std::string(e.what()).find("dog") != std::string::npos);
    }
}

TEST_CASE("zs_logits invariants") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        Matrix texts(6, 8);
        for (double& v : texts.values()) v = rng.normal();
        Vector img(8);
        for (double& v : img) v = rng.normal();
        const double tau = rng.uniform(0.1, 200.0);
        const ZeroShotScores s = zs_logits(img, texts, tau);
        CHECK(std::abs(std::accumulate(s.logits.begin(), s.logits.end(), 0.0) - 1.0) < 1e-12);
        CHECK(argmax(s.logits) == argmax(s.similarities));
        for (double c : s.similarities) {
            CHECK(c >= -1.0);
            CHECK(c <= 1.0);
        }

        Vector scaled(img);
        for (double& v : scaled) v *= 7.5;
        Matrix texts2 = texts;
        for (double& v : texts2.row(2)) v *= 0.01;
        const Vector s2 = zs_logits(scaled, texts2, tau).logits;
        for (std::size_t k = 0; k < 6; ++k) CHECK(std::abs(s2[k] - s.logits[k]) < 1e-12);
    }
}
