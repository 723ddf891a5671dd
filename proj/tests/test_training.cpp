#include "ldc/error.hpp"
#include "ldc/gradcheck.hpp"
#include "ldc/model_check.hpp"
#include "ldc/synth.hpp"
#include "ldc/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace ldc;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.num_classes = 5;
    c.embed_dim = 6;
    c.level_dims = {8, 6, 7, 9};
    c.reduction = 2;
    c.icd_hidden = 10;
    return c;
}

Projector affine_projector(std::size_t in, std::size_t out, std::uint64_t seed) {
    Rng rng(seed);
    Matrix w(in, out);
    for (double& v : w.values()) v = 0.4 * rng.normal();
    Vector b(out);
    for (double& v : b) v = 0.1 * rng.normal();
    return Projector::make_affine(w, b);
}

SynthSpec small_synth(std::uint64_t seed) {
    SynthSpec s = default_synth_spec();
    s.samples_per_class = 40;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("total_loss examples") {
    Vector peaked(4, -30.0);
    peaked[2] = 30.0;
    const Vector zs{0.1, 0.2, 0.3, 0.4};
    const TotalLoss perfect = total_loss(peaked, peaked, peaked, zs, 2, 0.0, LossToggles{});
    CHECK(perfect.terms.total < 1e-20);

    const TotalLoss same = total_loss(zs, zs, zs, zs, 1, 5.0, LossToggles{});
    CHECK(same.terms.sim_maf == 0.0);
    CHECK(same.terms.sim_icd == 0.0);
    CHECK(same.terms.total == doctest::Approx(3.0 * nn::cross_entropy(zs, 1).loss));

    CHECK_THROWS_AS(total_loss(zs, zs, zs, zs, 4, 1.0, LossToggles{}), IndexError);
}

TEST_CASE("total_loss gradients match finite differences") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        Vector a(5), b(5), c(5), raw(5);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        for (double& v : c) v = rng.normal();
        for (double& v : raw) v = rng.normal();
        const Vector zs = nn::softmax(raw);
        const auto y = static_cast<std::size_t>(rng.below(5));
        const double lambda = rng.uniform(0.0, 2.0);
        const TotalLoss tl = total_loss(a, b, c, zs, y, lambda, LossToggles{});
        auto fa = [&](std::span<const double> x) { return total_loss(x, b, c, zs, y, lambda, {}).terms.total; };
        auto fb = [&](std::span<const double> x) { return total_loss(a, x, c, zs, y, lambda, {}).terms.total; };
        auto fc = [&](std::span<const double> x) { return total_loss(a, b, x, zs, y, lambda, {}).terms.total; };
        CHECK(nn::max_relative_error(tl.grads.maf, nn::finite_diff_grad(fa, a, 1e-5)) < 1e-6);
        CHECK(nn::max_relative_error(tl.grads.icd, nn::finite_diff_grad(fb, b, 1e-5)) < 1e-6);
        CHECK(nn::max_relative_error(tl.grads.alf, nn::finite_diff_grad(fc, c, 1e-5)) < 1e-6);
    }
}

TEST_CASE("loss toggles parse") {
    CHECK(parse_loss_toggles("all") == LossToggles{});
    const LossToggles t = parse_loss_toggles("ce_maf,ce_icd,ce_alf");
    CHECK_FALSE(t.sim_maf);
    CHECK_FALSE(t.sim_icd);
    CHECK(to_string(t) == "ce_maf,ce_icd,ce_alf");
    CHECK(parse_loss_toggles(to_string(LossToggles{})) == LossToggles{});
    CHECK_THROWS_AS(parse_loss_toggles("ce_zs"), ConfigError);
}

TEST_CASE("model gradients match finite differences") {
    for (FusionMode mode : {FusionMode::weighted, FusionMode::learnable}) {
        ModelConfig c = small_config();
        c.fusion = mode;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            LdcModel m = init_model(c, affine_projector(6, 6, seed), seed);
            randomize_params(m, seed);
            const ExampleStore store = random_examples(c, 4, seed);
            const auto ex = store.examples();
            const GradCheckReport r = check_gradients(m, ex, 1.0, LossToggles{});
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("model gradients under every ALF strategy") {
    for (const char* s : {"adaptive", "fixed:0.3", "sum", "maf-only", "icd-only"}) {
        CAPTURE(s);
        ModelConfig c = small_config();
        c.alf = parse_alf_strategy(s);
        if (c.alf.kind == AlfStrategy::Kind::maf_only) c.use_icd = false;
        if (c.alf.kind == AlfStrategy::Kind::icd_only) c.use_maf = false;
        LdcModel m = init_model(c, affine_projector(6, 6, 1), 1);
        randomize_params(m, 4);
        const ExampleStore store = random_examples(c, 3, 2);
        const auto ex = store.examples();
        CHECK(check_gradients(m, ex, 0.7, LossToggles{}).max_rel_error < 1e-4);
    }
}

TEST_CASE("batch gradient is independent of thread count") {
    ModelConfig c = small_config();
    LdcModel m = init_model(c, affine_projector(6, 6, 3), 3);
    randomize_params(m, 3);
    const ExampleStore store = random_examples(c, 37, 5);
    const auto ex = store.examples();
    BatchResult one = batch_gradient(m, ex, 1.0, {}, 1);
    BatchResult four = batch_gradient(m, ex, 1.0, {}, 4);
    CHECK(identical_params(one.grad, four.grad));
    CHECK(one.terms.total == four.terms.total);
}

TEST_CASE("fresh model: ICD equals ZS and its similarity loss is zero") {
    const SynthResult sr = gen_synthetic(small_synth(0));
    TrainConfig cfg;
    const LdcModel m = init_model(model_config_for(sr.bundle, cfg), sr.bundle.projector, 0);
    const auto zs = zero_shot_table(sr.bundle, sr.bundle.manifest.temperature);
    for (std::size_t i = 0; i < sr.bundle.records.size(); i += 7) {
        const Record& r = sr.bundle.records[i];
        const Streams s = model_forward(m, r.levels, image_embedding(sr.bundle, r), zs[i]);
        CHECK(bitwise_equal(s.icd, s.zs));
        CHECK(nn::l1_loss(s.icd, s.zs).loss == 0.0);
    }
}

TEST_CASE("train contract") {
    const SynthResult sr = gen_synthetic(small_synth(1));
    const FeatureBundle& b = sr.bundle;
    const EpisodeSplit split = sample_few_shot(b, 4, 1);
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.epochs = 3;
    cfg.batch_size = 7;

    SUBCASE("zero epochs returns the initialization") {
        TrainConfig zero = cfg;
        zero.epochs = 0;
        const TrainResult r = train(b, split, zero);
        CHECK(identical_params(r.model, init_model(model_config_for(b, zero), b.projector, 1)));
        CHECK(r.trace.empty());
    }
    SUBCASE("same seed, same parameters and reports; thread count does not matter") {
        TrainConfig threaded = cfg;
        threaded.threads = 3;
        const TrainResult a = train(b, split, cfg);
        const TrainResult c = train(b, split, threaded);
        CHECK(identical_params(a.model, c.model));
        CHECK(a.trace.size() == 3);
        for (std::size_t e = 0; e < 3; ++e) CHECK(a.trace[e].mean_loss == c.trace[e].mean_loss);
        CHECK(to_json(evaluate(b, split.test, a.model, StreamKind::alf)) ==
              to_json(evaluate(b, split.test, c.model, StreamKind::alf)));
    }
    SUBCASE("different seeds differ") {
        TrainConfig other = cfg;
        other.seed = 2;
        CHECK_FALSE(identical_params(train(b, split, cfg).model, train(b, split, other).model));
    }
    SUBCASE("projector and text embeddings are untouched") {
        FeatureBundle affine = b;
        affine.projector = affine_projector(32, 32, 9);
        const FeatureBundle before = affine;
        const TrainResult r = train(affine, split, cfg);
        CHECK(identical(affine, before));
        CHECK(r.model.maf.projector == affine.projector);
    }
    SUBCASE("invalid config") {
        TrainConfig bad = cfg;
        bad.lambda = -1.0;
        CHECK_THROWS_AS(train(b, split, bad), ConfigError);
        bad = cfg;
        bad.batch_size = 0;
        CHECK_THROWS_AS(train(b, split, bad), ConfigError);
        EpisodeSplit broken = split;
        broken.train.push_back(b.records.size());
        CHECK_THROWS_AS(train(b, broken, cfg), IndexError);
    }
}

TEST_CASE("disabled loss terms contribute no gradient") {
    ModelConfig c = small_config();
    LdcModel m = init_model(c, affine_projector(6, 6, 2), 2);
    randomize_params(m, 2);
    const ExampleStore store = random_examples(c, 5, 1);
    const auto ex = store.examples();

    auto grad_of = [&](const LossToggles& t) { return batch_gradient(m, ex, 1.0, t).grad; };
    LossToggles only_sim_maf{false, false, false, true, false};
    LdcModel g = grad_of(only_sim_maf);
    // L1(s_MAF, s_ZS) reaches MAF parameters only.
    for (auto& p : g.trainable()) {
        if (p.name.rfind("maf.", 0) == 0) continue;
        for (double v : p.values) CHECK(v == 0.0);
    }
    LossToggles only_sim_icd{false, false, false, false, true};
    LdcModel gi = grad_of(only_sim_icd);
    for (auto& p : gi.trainable()) {
        if (p.name.rfind("alf.", 0) == 0) {
            for (double v : p.values) CHECK(v == 0.0);
        }
    }
    LossToggles none{false, false, false, false, false};
    LdcModel g0 = grad_of(none);
    for (auto& p : g0.trainable())
        for (double v : p.values) CHECK(v == 0.0);
}

TEST_CASE("evaluate report") {
    const SynthResult sr = gen_synthetic(small_synth(2));
    const FeatureBundle& b = sr.bundle;
    const EpisodeSplit split = sample_few_shot(b, 4, 2);
    TrainConfig cfg;
    cfg.epochs = 2;
    const TrainResult tr = train(b, split, cfg);
    for (StreamKind s : {StreamKind::zs, StreamKind::maf, StreamKind::icd, StreamKind::alf}) {
        const EvalReport r = evaluate(b, split.test, tr.model, s);
        CHECK(r.total == split.test.size());
        std::size_t trace = 0;
        for (std::size_t c = 0; c < r.confusion.size(); ++c) {
            trace += r.confusion[c][c];
            CHECK(std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0}) == r.class_counts[c]);
        }
        CHECK(std::abs(static_cast<double>(trace) / r.total - r.accuracy) < 1e-12);
        CHECK(r.confusion_score >= 0.0);
        CHECK(r.confusion_score <= 1.0);
        const std::string csv = confusion_csv(r, b.manifest.class_names);
        CHECK(csv.find("class_9") != std::string::npos);
    }
    const LdcModel fresh = init_model(model_config_for(b, cfg), b.projector, 0);
    CHECK(evaluate(b, split.test, fresh, StreamKind::zs).accuracy == zero_shot_accuracy(b, split.test));
    CHECK_THROWS_AS(evaluate(b, {}, fresh, StreamKind::alf), DataError);
}

TEST_CASE("argmax ties resolve low") {
    CHECK(argmax(Vector{1.0, 3.0, 3.0}) == 1);
    CHECK(argmax(Vector{0.0, 0.0}) == 0);
    CHECK_THROWS_AS(argmax(Vector{}), ShapeError);
}

TEST_CASE("perfect memorization on a separable toy set") {
    SynthSpec spec = default_synth_spec();
    spec.num_classes = 4;
    spec.embed_dim = 8;
    spec.level_dims = {8, 8, 8, 8};
    spec.samples_per_class = 8;
    spec.test_fraction = 0.0;
    spec.confusion = planted_confusion(4, {{0, 1, 1.5}});
    spec.noise = 0.05;
    const SynthResult sr = gen_synthetic(spec);
    const EpisodeSplit all = sample_few_shot(sr.bundle, 8, 0);
    CHECK(nearest_prototype_accuracy(sr.bundle, sr.truth.level_prototypes, all.train) == 1.0);
    TrainConfig cfg;
    cfg.shots = 8;
    cfg.batch_size = 4;
    cfg.epochs = 100;
    const TrainResult tr = train(sr.bundle, all, cfg);
    CHECK(evaluate(sr.bundle, all.train, tr.model, StreamKind::alf).accuracy == 1.0);
}

TEST_CASE("maf-only training fits the default synthetic task") {
    const SynthResult sr = gen_synthetic(default_synth_spec());
    const EpisodeSplit split = sample_few_shot(sr.bundle, 16, 0);
    TrainConfig cfg;
    cfg.use_icd = false;
    cfg.alf = parse_alf_strategy("maf-only");
    const TrainResult tr = train(sr.bundle, split, cfg);
    CHECK(evaluate(sr.bundle, split.train, tr.model, StreamKind::alf).accuracy >= 0.95);
}

TEST_CASE("model and config serialization") {
    ModelConfig c = small_config();
    c.fusion = FusionMode::learnable;
    c.alf = parse_alf_strategy("fixed:0.4");
    c.icd_branches = parse_icd_branches("a1,a3,res");
    LdcModel m = init_model(c, affine_projector(6, 6, 8), 8);
    randomize_params(m, 8);
    const LdcModel back = model_from_json(model_to_json(m));
    CHECK(identical_params(m, back));
    const auto path = std::filesystem::temp_directory_path() / "ldc_test_model.json";
    save_model(m, path);
    CHECK(identical_params(load_model(path), m));
    std::filesystem::remove(path);

    TrainConfig t;
    t.shots = 8;
    t.lambda = 0.25;
    t.temperature = 50.0;
    t.losses = parse_loss_toggles("ce_alf,sim_icd");
    t.betas = {0.4, 0.3, 0.2, 0.1};
    const TrainConfig t2 = train_config_from_json(to_json(t));
    CHECK(to_json(t2) == to_json(t));
}
