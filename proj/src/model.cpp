#include "ldc/model.hpp"

#include "ldc/error.hpp"

#include <fstream>
#include <sstream>

namespace ldc {

using nlohmann::json;

void validate(const ModelConfig& c) {
    using K = AlfStrategy::Kind;
    if (c.num_classes < 2) throw ConfigError("need at least two classes");
    if (c.embed_dim == 0) throw ConfigError("embedding dim must be positive");
    if (!(c.temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (c.reduction == 0) throw ConfigError("adapter reduction must be positive");
    if (c.use_maf && c.use_icd) {
        if (c.alf.kind == K::fixed && !(c.alf.fixed_alpha > 0.0 && c.alf.fixed_alpha < 1.0)) {
            throw ConfigError("fixed alpha must lie strictly inside (0, 1)");
        }
    } else if (c.use_maf && c.alf.kind != K::maf_only) {
        throw ConfigError("with ICD disabled the ALF strategy must be maf-only");
    } else if (c.use_icd && c.alf.kind != K::icd_only) {
        throw ConfigError("with MAF disabled the ALF strategy must be icd-only");
    }
    if (c.use_maf) {
        bool any = false;
        for (std::size_t l = 0; l < kNumLevels; ++l) {
            if (!c.levels[l]) continue;
            any = true;
            if (c.level_dims[l] == 0) throw ConfigError("active level has zero dim");
            if (c.fusion == FusionMode::weighted && !(c.betas[l] > 0.0)) {
                throw ConfigError("fusion weights of active levels must be positive");
            }
        }
        if (!any) throw ConfigError("at least one feature level must be active");
    }
    if (c.use_icd) {
        if (!c.icd_branches.a1 && !c.icd_branches.a2) throw ConfigError("ICD needs at least one of a1, a2");
        if (c.icd_hidden == 0) throw ConfigError("ICD hidden dim must be positive");
    }
}

bool LdcModel::uses_alpha() const noexcept {
    return config.use_maf && config.use_icd && config.alf.kind == AlfStrategy::Kind::adaptive;
}

std::vector<nn::ParamView> LdcModel::trainable() {
    std::vector<nn::ParamView> out;
    if (config.use_maf) collect_params(maf, out);
    if (config.use_icd) collect_params(icd, out);
    if (uses_alpha()) collect_params(alpha, out);
    return out;
}

LdcModel init_model(const ModelConfig& config, const Projector& projector, std::uint64_t seed) {
    validate(config);
    if (config.use_maf && projector.out_dim() != config.embed_dim) {
        throw ConfigError("projector output dim " + std::to_string(projector.out_dim()) + " != embedding dim " +
                          std::to_string(config.embed_dim));
    }
    Rng rng(seed, 0x4d4f44454cULL);
    LdcModel m;
    m.config = config;
    if (config.use_maf) {
        m.maf = make_maf_head(config.level_dims, config.num_classes, projector, config.fusion, config.betas,
                              config.levels, config.reduction, rng);
    } else {
        m.maf.projector = projector;
    }
    if (config.use_icd) {
        m.icd = make_icd_head(config.num_classes, config.embed_dim, config.icd_hidden, config.reduction,
                              config.icd_branches, rng);
    }
    m.alpha = AlphaGenerator::make(config.embed_dim, rng);
    return m;
}

LdcModel zeros_like(const LdcModel& model) {
    LdcModel g;
    g.config = model.config;
    g.maf = zeros_like(model.maf);
    g.icd = zeros_like(model.icd);
    g.alpha = AlphaGenerator{nn::LinearLayer::zeros(model.alpha.linear.in_dim(), 1)};
    return g;
}

bool identical_params(const LdcModel& a, const LdcModel& b) {
    LdcModel ca = a;
    LdcModel cb = b;
    const auto pa = ca.trainable();
    const auto pb = cb.trainable();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name || !bitwise_equal(pa[i].values, pb[i].values)) return false;
    }
    const Projector& xa = a.maf.projector;
    const Projector& xb = b.maf.projector;
    if (xa.identity != xb.identity || xa.in_dim() != xb.in_dim()) return false;
    return xa.identity ||
           (bitwise_equal(xa.map.weight.values(), xb.map.weight.values()) && bitwise_equal(xa.map.bias, xb.map.bias));
}

Streams model_forward(const LdcModel& model, const std::array<Vector, kNumLevels>& levels,
                      std::span<const double> image_emb, std::span<const double> s_zs, ForwardCache* cache) {
    using K = AlfStrategy::Kind;
    const ModelConfig& c = model.config;
    if (s_zs.size() != c.num_classes) {
        throw ShapeError("model_forward: zero-shot logits have dim " + std::to_string(s_zs.size()) + ", model has " +
                         std::to_string(c.num_classes) + " classes");
    }
    Streams s;
    s.zs.assign(s_zs.begin(), s_zs.end());
    if (c.use_maf) {
        MafOutput out = maf_forward(levels, model.maf, cache ? &cache->maf : nullptr);
        s.z_e = std::move(out.z_e);
        s.maf = std::move(out.logits);
    } else {
        if (image_emb.size() != c.embed_dim) {
            throw ShapeError("model_forward: image embedding dim " + std::to_string(image_emb.size()) +
                             ", model expects " + std::to_string(c.embed_dim));
        }
        s.z_e.assign(image_emb.begin(), image_emb.end());
    }
    if (c.use_icd) {
        IcdOutput out = icd_forward(s_zs, s.z_e, model.icd, cache ? &cache->icd : nullptr);
        s.icd = std::move(out.logits);
        s.icd_residual = std::move(out.residual);
    }
    if (!c.use_maf && !c.use_icd) {
        s.alf = s.zs;
        return s;
    }
    switch (c.alf.kind) {
        case K::adaptive:
            s.alpha = alpha_gen(s.z_e, model.alpha);
            if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw NumericError("fusion weight alpha saturated or NaN");
            s.alf = alf_fuse(s.maf, s.icd, s.alpha);
            break;
        case K::fixed:
            s.alpha = c.alf.fixed_alpha;
            s.alf = alf_fuse(s.maf, s.icd, s.alpha);
            break;
        case K::sum:
            s.alf = s.maf;
            for (std::size_t i = 0; i < s.alf.size(); ++i) s.alf[i] += s.icd[i];
            break;
        case K::icd_only:
            s.alpha = 0.0;
            s.alf = s.icd;
            break;
        case K::maf_only:
            s.alpha = 1.0;
            s.alf = s.maf;
            break;
    }
    return s;
}

void model_backward(const LdcModel& model, const ForwardCache& cache, const Streams& s, const StreamGrads& g,
                    LdcModel& grad) {
    using K = AlfStrategy::Kind;
    const ModelConfig& c = model.config;
    const std::size_t n = c.num_classes;
    auto init = [n](const Vector& v) { return v.empty() ? Vector(n, 0.0) : v; };
    Vector d_maf = init(g.maf);
    Vector d_icd = init(g.icd);
    Vector d_embed(c.embed_dim, 0.0);

    if (!g.alf.empty() && (c.use_maf || c.use_icd)) {
        switch (c.alf.kind) {
            case K::adaptive: {
                double d_alpha = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    d_maf[i] += s.alpha * g.alf[i];
                    d_icd[i] += (1.0 - s.alpha) * g.alf[i];
                    d_alpha += g.alf[i] * (s.maf[i] - s.icd[i]);
                }
                const Vector dz = alpha_backward(s.z_e, s.alpha, d_alpha, model.alpha, grad.alpha);
                for (std::size_t i = 0; i < dz.size(); ++i) d_embed[i] += dz[i];
                break;
            }
            case K::fixed:
                for (std::size_t i = 0; i < n; ++i) {
                    d_maf[i] += s.alpha * g.alf[i];
                    d_icd[i] += (1.0 - s.alpha) * g.alf[i];
                }
                break;
            case K::sum:
                for (std::size_t i = 0; i < n; ++i) {
                    d_maf[i] += g.alf[i];
                    d_icd[i] += g.alf[i];
                }
                break;
            case K::icd_only:
                for (std::size_t i = 0; i < n; ++i) d_icd[i] += g.alf[i];
                break;
            case K::maf_only:
                for (std::size_t i = 0; i < n; ++i) d_maf[i] += g.alf[i];
                break;
        }
    }
    if (c.use_icd) {
        const Vector dz = icd_backward(cache.icd, d_icd, c.embed_dim, model.icd, grad.icd);
        for (std::size_t i = 0; i < dz.size(); ++i) d_embed[i] += dz[i];
    }
    // Without MAF, z_e is the frozen image embedding and its gradient is dropped.
    if (c.use_maf) maf_backward(cache.maf, d_maf, d_embed, model.maf, grad.maf);
}

std::string_view to_string(StreamKind s) noexcept {
    switch (s) {
        case StreamKind::zs: return "zs";
        case StreamKind::maf: return "maf";
        case StreamKind::icd: return "icd";
        case StreamKind::alf: return "alf";
    }
    return "alf";
}

StreamKind parse_stream(std::string_view text) {
    if (text == "zs") return StreamKind::zs;
    if (text == "maf") return StreamKind::maf;
    if (text == "icd") return StreamKind::icd;
    if (text == "alf") return StreamKind::alf;
    throw ConfigError("unknown logits stream '" + std::string(text) + "' (expected zs, maf, icd, alf)");
}

const Vector& select(const Streams& s, StreamKind kind) {
    switch (kind) {
        case StreamKind::zs: return s.zs;
        case StreamKind::maf: return s.maf;
        case StreamKind::icd: return s.icd;
        case StreamKind::alf: return s.alf;
    }
    return s.alf;
}

json config_to_json(const ModelConfig& c) {
    return json{{"num_classes", c.num_classes},
                {"embed_dim", c.embed_dim},
                {"level_dims", c.level_dims},
                {"temperature", c.temperature},
                {"use_maf", c.use_maf},
                {"use_icd", c.use_icd},
                {"fusion", std::string(to_string(c.fusion))},
                {"betas", c.betas},
                {"levels", c.levels},
                {"reduction", c.reduction},
                {"icd_hidden", c.icd_hidden},
                {"icd_branches", to_string(c.icd_branches)},
                {"alf", to_string(c.alf)}};
}

ModelConfig config_from_json(const json& j) {
    try {
        ModelConfig c;
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.level_dims = j.at("level_dims").get<std::array<std::size_t, kNumLevels>>();
        c.temperature = j.at("temperature").get<double>();
        c.use_maf = j.at("use_maf").get<bool>();
        c.use_icd = j.at("use_icd").get<bool>();
        c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
        c.betas = j.at("betas").get<std::array<double, kNumLevels>>();
        c.levels = j.at("levels").get<std::array<bool, kNumLevels>>();
        c.reduction = j.at("reduction").get<std::size_t>();
        c.icd_hidden = j.at("icd_hidden").get<std::size_t>();
        c.icd_branches = parse_icd_branches(j.at("icd_branches").get<std::string>());
        c.alf = parse_alf_strategy(j.at("alf").get<std::string>());
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
}

json model_to_json(const LdcModel& model) {
    LdcModel copy = model;
    json params = json::array();
    for (const auto& p : copy.trainable()) {
        params.push_back({{"name", p.name}, {"values", std::vector<double>(p.values.begin(), p.values.end())}});
    }
    const Projector& pr = model.maf.projector;
    json projector{{"identity", pr.identity}, {"in_dim", pr.in_dim()}, {"out_dim", pr.out_dim()}};
    if (!pr.identity) {
        projector["weight"] = std::vector<double>(pr.map.weight.values().begin(), pr.map.weight.values().end());
        projector["bias"] = pr.map.bias;
    }
    return json{{"format", "ldc-model"},
                {"version", kModelFormatVersion},
                {"config", config_to_json(model.config)},
                {"projector", projector},
                {"params", params}};
}

LdcModel model_from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != "ldc-model") throw DataError("not an LDC model file");
        const auto version = j.at("version").get<std::uint32_t>();
        if (version != kModelFormatVersion) {
            throw VersionMismatchError("unsupported model version " + std::to_string(version));
        }
        const ModelConfig config = config_from_json(j.at("config"));
        const json& pj = j.at("projector");
        Projector projector;
        if (pj.at("identity").get<bool>()) {
            projector = Projector::make_identity(pj.at("in_dim").get<std::size_t>());
        } else {
            const auto in = pj.at("in_dim").get<std::size_t>();
            const auto out = pj.at("out_dim").get<std::size_t>();
            // stored out x in, the internal orientation
            Matrix w(out, in, pj.at("weight").get<std::vector<double>>());
            projector = Projector::make_affine(w.transposed(), pj.at("bias").get<Vector>());
        }
        LdcModel m = init_model(config, projector, 0);
        auto views = m.trainable();
        const json& params = j.at("params");
        if (params.size() != views.size()) throw DataError("model file has the wrong number of parameter tensors");
        for (std::size_t i = 0; i < views.size(); ++i) {
            const auto values = params[i].at("values").get<std::vector<double>>();
            if (params[i].at("name").get<std::string>() != views[i].name || values.size() != views[i].values.size()) {
                throw DataError("model parameter '" + views[i].name + "' does not match the config");
            }
            std::copy(values.begin(), values.end(), views[i].values.begin());
        }
        return m;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    }
}

void save_model(const LdcModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << model_to_json(model).dump(1) << '\n';
}

LdcModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open model '" + path.string() + "'");
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw DataError("model '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return model_from_json(j);
}

}  // namespace ldc
