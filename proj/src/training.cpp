#include "ldc/training.hpp"

#include "ldc/error.hpp"
#include "ldc/rng.hpp"
#include "ldc/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

namespace ldc {

using nlohmann::json;

LossToggles parse_loss_toggles(std::string_view text) {
    if (text == "all") return {};
    LossToggles t{false, false, false, false, false};
    if (text == "none") return t;
    std::string item;
    std::istringstream ss{std::string(text)};
    while (std::getline(ss, item, ',')) {
        if (item == "ce_maf") t.ce_maf = true;
        else if (item == "ce_icd") t.ce_icd = true;
        else if (item == "ce_alf") t.ce_alf = true;
        else if (item == "sim_maf") t.sim_maf = true;
        else if (item == "sim_icd") t.sim_icd = true;
        else throw ConfigError("unknown loss term '" + item + "' (expected ce_maf, ce_icd, ce_alf, sim_maf, sim_icd)");
    }
    return t;
}

std::string to_string(const LossToggles& t) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(t.ce_maf, "ce_maf");
    add(t.ce_icd, "ce_icd");
    add(t.ce_alf, "ce_alf");
    add(t.sim_maf, "sim_maf");
    add(t.sim_icd, "sim_icd");
    return out.empty() ? "none" : out;
}

TotalLoss total_loss(std::span<const double> s_maf, std::span<const double> s_icd, std::span<const double> s_alf,
                     std::span<const double> s_zs, std::size_t label, double lambda, const LossToggles& toggles) {
    const std::size_t n = s_zs.size();
    if (label >= n) {
        throw IndexError("total_loss: label " + std::to_string(label) + " out of range for " + std::to_string(n) +
                         " classes");
    }
    TotalLoss out;
    auto accumulate = [n](Vector& dst, const Vector& g, double scale) {
        if (dst.empty()) dst.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) dst[i] += scale * g[i];
    };
    if (!s_maf.empty()) {
        if (toggles.ce_maf) {
            const auto ce = nn::cross_entropy(s_maf, label);
            out.terms.ce_maf = ce.loss;
            accumulate(out.grads.maf, ce.grad, 1.0);
        }
        if (toggles.sim_maf) {
            const auto l1 = nn::l1_loss(s_maf, s_zs);
            out.terms.sim_maf = l1.loss;
            accumulate(out.grads.maf, l1.grad, lambda);
        }
    }
    if (!s_icd.empty()) {
        if (toggles.ce_icd) {
            const auto ce = nn::cross_entropy(s_icd, label);
            out.terms.ce_icd = ce.loss;
            accumulate(out.grads.icd, ce.grad, 1.0);
        }
        if (toggles.sim_icd) {
            const auto l1 = nn::l1_loss(s_icd, s_zs);
            out.terms.sim_icd = l1.loss;
            accumulate(out.grads.icd, l1.grad, lambda);
        }
    }
    if (!s_alf.empty() && toggles.ce_alf) {
        const auto ce = nn::cross_entropy(s_alf, label);
        out.terms.ce_alf = ce.loss;
        accumulate(out.grads.alf, ce.grad, 1.0);
    }
    out.terms.total = out.terms.ce_maf + out.terms.ce_icd + out.terms.ce_alf +
                      lambda * (out.terms.sim_maf + out.terms.sim_icd);
    return out;
}

void validate(const TrainConfig& c) {
    if (c.shots == 0) throw ConfigError("shots must be at least 1");
    if (c.batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw ConfigError("lambda must be a finite value >= 0");
    if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("learning rate must be positive");
    if (!(c.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (c.temperature && !(*c.temperature > 0.0)) throw ConfigError("temperature must be positive");
}

json to_json(const TrainConfig& c) {
    json j{{"shots", c.shots},
           {"seed", c.seed},
           {"epochs", c.epochs},
           {"batch", c.batch_size},
           {"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"lambda", c.lambda},
           {"temperature", c.temperature ? json(*c.temperature) : json(nullptr)},
           {"losses", to_string(c.losses)},
           {"use_maf", c.use_maf},
           {"use_icd", c.use_icd},
           {"fusion", std::string(to_string(c.fusion))},
           {"betas", c.betas},
           {"levels", c.levels},
           {"reduction", c.reduction},
           {"icd_hidden", c.icd_hidden},
           {"icd_branches", to_string(c.icd_branches)},
           {"alf", to_string(c.alf)}};
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.shots = j.value("shots", c.shots);
        c.seed = j.value("seed", c.seed);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.lambda = j.value("lambda", c.lambda);
        if (j.contains("temperature") && !j.at("temperature").is_null()) c.temperature = j.at("temperature").get<double>();
        if (j.contains("losses")) c.losses = parse_loss_toggles(j.at("losses").get<std::string>());
        c.use_maf = j.value("use_maf", c.use_maf);
        c.use_icd = j.value("use_icd", c.use_icd);
        if (j.contains("fusion")) c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
        if (j.contains("betas")) c.betas = j.at("betas").get<std::array<double, kNumLevels>>();
        if (j.contains("levels")) c.levels = j.at("levels").get<std::array<bool, kNumLevels>>();
        c.reduction = j.value("reduction", c.reduction);
        c.icd_hidden = j.value("icd_hidden", c.icd_hidden);
        if (j.contains("icd_branches")) c.icd_branches = parse_icd_branches(j.at("icd_branches").get<std::string>());
        if (j.contains("alf")) c.alf = parse_alf_strategy(j.at("alf").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    return c;
}

ModelConfig model_config_for(const FeatureBundle& bundle, const TrainConfig& t) {
    ModelConfig c;
    c.num_classes = bundle.manifest.num_classes;
    c.embed_dim = bundle.manifest.embed_dim;
    c.level_dims = bundle.manifest.level_dims;
    c.temperature = t.temperature.value_or(bundle.manifest.temperature);
    c.use_maf = t.use_maf;
    c.use_icd = t.use_icd;
    c.fusion = t.fusion;
    c.betas = t.betas;
    c.levels = t.levels;
    c.reduction = t.reduction;
    c.icd_hidden = t.icd_hidden;
    c.icd_branches = t.icd_branches;
    c.alf = t.alf;
    return c;
}

std::size_t resolve_threads(std::size_t requested) {
    std::size_t n = requested != 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LDC_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(n, 1);
}

namespace {

// Runs fn(i) for i in [0, count) over up to `threads` workers. Work is split by
// index so results written per index do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

constexpr std::size_t kChunk = 8;

void add_terms(LossTerms& dst, const LossTerms& src) {
    dst.ce_maf += src.ce_maf;
    dst.ce_icd += src.ce_icd;
    dst.ce_alf += src.ce_alf;
    dst.sim_maf += src.sim_maf;
    dst.sim_icd += src.sim_icd;
    dst.total += src.total;
}

void scale_terms(LossTerms& t, double s) {
    t.ce_maf *= s;
    t.ce_icd *= s;
    t.ce_alf *= s;
    t.sim_maf *= s;
    t.sim_icd *= s;
    t.total *= s;
}

}  // namespace

BatchResult batch_gradient(const LdcModel& model, std::span<const Example> batch, double lambda,
                           const LossToggles& toggles, std::size_t threads) {
    if (batch.empty()) throw ContractError("batch_gradient: empty batch");
    const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<LdcModel> chunk_grads(chunks);
    std::vector<LossTerms> chunk_terms(chunks);
    parallel_for(chunks, threads, [&](std::size_t ci) {
        LdcModel g = zeros_like(model);
        LossTerms terms;
        const std::size_t hi = std::min(batch.size(), (ci + 1) * kChunk);
        for (std::size_t p = ci * kChunk; p < hi; ++p) {
            const Example& ex = batch[p];
            ForwardCache cache;
            const Streams s = model_forward(model, *ex.levels, ex.image_emb, ex.s_zs, &cache);
            const TotalLoss tl = total_loss(s.maf, s.icd, s.alf, s.zs, ex.label, lambda, toggles);
            model_backward(model, cache, s, tl.grads, g);
            add_terms(terms, tl.terms);
        }
        chunk_grads[ci] = std::move(g);
        chunk_terms[ci] = terms;
    });

    BatchResult out{{}, zeros_like(model)};
    const double inv = 1.0 / static_cast<double>(batch.size());
    auto dst = out.grad.trainable();
    for (std::size_t ci = 0; ci < chunks; ++ci) {
        auto src = chunk_grads[ci].trainable();
        for (std::size_t i = 0; i < dst.size(); ++i)
            for (std::size_t k = 0; k < dst[i].values.size(); ++k) dst[i].values[k] += inv * src[i].values[k];
        add_terms(out.terms, chunk_terms[ci]);
    }
    return out;
}

double batch_mean_loss(const LdcModel& model, std::span<const Example> batch, double lambda,
                       const LossToggles& toggles) {
    double total = 0.0;
    for (const Example& ex : batch) {
        const Streams s = model_forward(model, *ex.levels, ex.image_emb, ex.s_zs);
        total += total_loss(s.maf, s.icd, s.alf, s.zs, ex.label, lambda, toggles).terms.total;
    }
    return total / static_cast<double>(batch.size());
}

std::vector<Vector> zero_shot_table(const FeatureBundle& bundle, double temperature) {
    std::vector<Vector> out;
    out.reserve(bundle.records.size());
    for (const Record& r : bundle.records) {
        out.push_back(zs_logits(image_embedding(bundle, r), bundle.text_embeddings, temperature,
                                bundle.manifest.class_names)
                          .logits);
    }
    return out;
}

TrainResult train(const FeatureBundle& bundle, const EpisodeSplit& split, const TrainConfig& config) {
    validate(config);
    for (std::size_t i : split.train) {
        if (i >= bundle.records.size()) throw IndexError("train index " + std::to_string(i) + " out of range");
    }
    const ModelConfig mc = model_config_for(bundle, config);
    TrainResult result{init_model(mc, bundle.projector, config.seed), {}};
    LdcModel& model = result.model;

    std::vector<Vector> zs(bundle.records.size());
    std::vector<Vector> embeds(bundle.records.size());
    for (std::size_t i : split.train) {
        embeds[i] = image_embedding(bundle, bundle.records[i]);
        zs[i] = zs_logits(embeds[i], bundle.text_embeddings, mc.temperature, bundle.manifest.class_names).logits;
    }

    nn::AdamWState opt;
    opt.config.lr = config.lr;
    opt.config.weight_decay = config.weight_decay;
    const std::size_t threads = resolve_threads(config.threads);

    std::vector<std::size_t> order(split.train);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(config.seed, 0x5348554646ULL + epoch);
        for (std::size_t k = order.size(); k > 1; --k) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(k));
            std::swap(order[k - 1], order[j]);
        }
        EpochStats stats;
        stats.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<Example> batch;
            batch.reserve(stop - start);
            for (std::size_t p = start; p < stop; ++p) {
                const std::size_t idx = order[p];
                const Record& r = bundle.records[idx];
                batch.push_back({&r.levels, embeds[idx], zs[idx], r.label});
            }
            BatchResult br = batch_gradient(model, batch, config.lambda, config.losses, threads);
            LdcModel& grad = br.grad;
            const LossTerms& batch_terms = br.terms;
            if (!std::isfinite(batch_terms.total)) {
                throw NumericError("non-finite loss in epoch " + std::to_string(epoch));
            }
            add_terms(stats.mean_terms, batch_terms);

            auto params = model.trainable();
            auto grads = grad.trainable();
            std::vector<std::span<double>> p_spans;
            std::vector<std::span<const double>> g_spans;
            for (std::size_t i = 0; i < params.size(); ++i) {
                p_spans.push_back(params[i].values);
                g_spans.emplace_back(grads[i].values);
            }
            nn::adamw_step(p_spans, g_spans, opt);
        }
        if (!order.empty()) scale_terms(stats.mean_terms, 1.0 / static_cast<double>(order.size()));
        stats.mean_loss = stats.mean_terms.total;
        result.trace.push_back(stats);
    }
    return result;
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw ShapeError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

EvalReport evaluate(const FeatureBundle& bundle, std::span<const std::size_t> indices, const LdcModel& model,
                    StreamKind stream, std::size_t threads) {
    if (indices.empty()) throw DataError("evaluate: empty test set");
    const ModelConfig& mc = model.config;
    const std::size_t n = mc.num_classes;
    if (n != bundle.manifest.num_classes || mc.embed_dim != bundle.manifest.embed_dim ||
        (mc.use_maf && mc.level_dims != bundle.manifest.level_dims)) {
        throw ShapeError("evaluate: model dims do not match the bundle");
    }
    if ((stream == StreamKind::maf && !mc.use_maf) || (stream == StreamKind::icd && !mc.use_icd)) {
        throw ConfigError("evaluate: stream '" + std::string(to_string(stream)) + "' is disabled in this model");
    }

    std::vector<std::size_t> predicted(indices.size());
    std::vector<Vector> dist(indices.size());
    parallel_for(indices.size(), resolve_threads(threads), [&](std::size_t k) {
        const std::size_t idx = indices[k];
        if (idx >= bundle.records.size()) throw IndexError("test index " + std::to_string(idx) + " out of range");
        const Record& r = bundle.records[idx];
        const Vector emb = image_embedding(bundle, r);
        const Vector zs = zs_logits(emb, bundle.text_embeddings, mc.temperature, bundle.manifest.class_names).logits;
        const Streams s = model_forward(model, r.levels, emb, zs);
        const Vector& scores = select(s, stream);
        predicted[k] = argmax(scores);
        dist[k] = nn::softmax(scores);
    });

    EvalReport rep;
    rep.stream = stream;
    rep.total = indices.size();
    rep.class_counts.assign(n, 0);
    rep.confusion.assign(n, std::vector<std::size_t>(n, 0));
    std::vector<Vector> mean_dist(n, Vector(n, 0.0));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t y = bundle.records[indices[k]].label;
        rep.class_counts[y] += 1;
        rep.confusion[y][predicted[k]] += 1;
        if (predicted[k] == y) rep.correct += 1;
        for (std::size_t c = 0; c < n; ++c) mean_dist[y][c] += dist[k][c];
    }
    rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
    rep.per_class_accuracy.assign(n, std::numeric_limits<double>::quiet_NaN());
    double off_mass = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < n; ++c) {
        if (rep.class_counts[c] == 0) continue;
        const double cnt = static_cast<double>(rep.class_counts[c]);
        rep.per_class_accuracy[c] = static_cast<double>(rep.confusion[c][c]) / cnt;
        off_mass += 1.0 - mean_dist[c][c] / cnt;
        ++present;
    }
    rep.confusion_score = off_mass / static_cast<double>(present);
    return rep;
}

json to_json(const EvalReport& r) {
    json per_class = json::array();
    for (double a : r.per_class_accuracy) per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
    return json{{"stream", std::string(to_string(r.stream))},
                {"total", r.total},
                {"correct", r.correct},
                {"accuracy", r.accuracy},
                {"class_counts", r.class_counts},
                {"per_class_accuracy", per_class},
                {"confusion_matrix", r.confusion},
                {"confusion_score", r.confusion_score}};
}

std::string confusion_csv(const EvalReport& r, std::span<const std::string> class_names) {
    std::ostringstream os;
    os << "true\\pred";
    for (std::size_t c = 0; c < r.confusion.size(); ++c) os << ',' << (c < class_names.size() ? class_names[c] : std::to_string(c));
    os << '\n';
    for (std::size_t t = 0; t < r.confusion.size(); ++t) {
        os << (t < class_names.size() ? class_names[t] : std::to_string(t));
        for (std::size_t v : r.confusion[t]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

json to_json(const std::vector<EpochStats>& trace) {
    json out = json::array();
    for (const auto& e : trace) {
        out.push_back({{"epoch", e.epoch},
                       {"loss", e.mean_loss},
                       {"ce_maf", e.mean_terms.ce_maf},
                       {"ce_icd", e.mean_terms.ce_icd},
                       {"ce_alf", e.mean_terms.ce_alf},
                       {"sim_maf", e.mean_terms.sim_maf},
                       {"sim_icd", e.mean_terms.sim_icd}});
    }
    return out;
}

}  // namespace ldc
