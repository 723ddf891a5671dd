// ldc: ingest, synth, train, eval, ablate and gradcheck.
//
// Exit codes: 0 ok, 1 check failed, 2 config error, 3 data error, 4 numeric failure.

#include "ldc/bundle.hpp"
#include "ldc/error.hpp"
#include "ldc/ingest.hpp"
#include "ldc/model_check.hpp"
#include "ldc/synth.hpp"
#include "ldc/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace ldc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kResultSchema = 1;

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kData = 3, kNumeric = 4 };

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
    return out;
}

double parse_double(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw ConfigError("bad " + what + " value '" + text + "'");
    return v;
}

std::array<double, kNumLevels> parse_betas(const std::string& text) {
    const auto items = split_list(text);
    if (items.size() != kNumLevels) throw ConfigError("--betas needs exactly 4 comma-separated weights");
    std::array<double, kNumLevels> b{};
    for (std::size_t l = 0; l < kNumLevels; ++l) b[l] = parse_double(items[l], "beta");
    return b;
}

// "3,4" -> levels 3 and 4 active; "all" -> every level.
std::array<bool, kNumLevels> parse_levels(const std::string& text) {
    std::array<bool, kNumLevels> a{};
    if (text == "all") return {true, true, true, true};
    for (const std::string& item : split_list(text)) {
        if (item.size() != 1 || item[0] < '1' || item[0] > '4') {
            throw ConfigError("bad level '" + item + "' (expected 1..4 or all)");
        }
        a[item[0] - '1'] = true;
    }
    return a;
}

// Model and training flags shared by train and ablate.
struct TrainFlags {
    std::string config_path;
    std::size_t shots = 16;
    std::uint64_t seed = 0;
    std::string fusion, betas, alf, icd_branches, losses, levels;
    double lambda = 1.0, lr = 1e-3, temperature = 0.0;
    std::size_t epochs = 50, batch = 64;
    bool no_maf = false, no_icd = false;
    std::vector<CLI::Option*> options;

    void add(CLI::App& app) {
        auto opt = [&](CLI::Option* o) { options.push_back(o); };
        app.add_option("--config", config_path, "resolved config JSON to start from")->check(CLI::ExistingFile);
        opt(app.add_option("--shots", shots, "labeled images per class")
                ->check(CLI::IsMember({1, 2, 4, 8, 16})));
        opt(app.add_option("--seed", seed, "episode and initialization seed"));
        opt(app.add_option("--fusion", fusion, "multi-level fusion")->check(CLI::IsMember({"wf", "lf"})));
        opt(app.add_option("--betas", betas, "weighted-fusion weights, e.g. 0.1,0.2,0.3,0.4"));
        opt(app.add_option("--levels", levels, "active feature levels, e.g. 3,4 or all"));
        opt(app.add_option("--lambda", lambda, "similarity loss weight"));
        opt(app.add_option("--alf", alf, "adaptive | icd-only | maf-only | sum | fixed:<alpha>"));
        opt(app.add_option("--icd-branches", icd_branches, "all or a subset of a1,a2,a3,res"));
        opt(app.add_option("--losses", losses, "all or a subset of ce_maf,ce_icd,ce_alf,sim_maf,sim_icd"));
        opt(app.add_option("--epochs", epochs, "training epochs"));
        opt(app.add_option("--lr", lr, "AdamW learning rate"));
        opt(app.add_option("--batch", batch, "mini-batch size"));
        opt(app.add_option("--temperature", temperature, "zero-shot temperature (default: bundle manifest)"));
        opt(app.add_flag("--no-maf", no_maf, "disable the multi-level adapter branch"));
        opt(app.add_flag("--no-icd", no_icd, "disable the deconfusion branch"));
    }

    bool given(const std::string& name) const {
        for (const CLI::Option* o : options)
            if (o->check_lname(name.substr(2)) && o->count() > 0) return true;
        return false;
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (!config_path.empty()) {
            json j = read_json(config_path);
            if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
            c = train_config_from_json(j);
        }
        if (given("--shots")) c.shots = shots;
        if (given("--seed")) c.seed = seed;
        if (given("--fusion")) c.fusion = parse_fusion_mode(fusion);
        if (given("--betas")) c.betas = parse_betas(betas);
        if (given("--levels")) c.levels = parse_levels(levels);
        if (given("--lambda")) c.lambda = lambda;
        if (given("--alf")) c.alf = parse_alf_strategy(alf);
        if (given("--icd-branches")) c.icd_branches = parse_icd_branches(icd_branches);
        if (given("--losses")) c.losses = parse_loss_toggles(losses);
        if (given("--epochs")) c.epochs = epochs;
        if (given("--lr")) c.lr = lr;
        if (given("--batch")) c.batch_size = batch;
        if (given("--temperature")) c.temperature = temperature;
        if (given("--no-maf")) {
            c.use_maf = false;
            if (!given("--alf")) c.alf = parse_alf_strategy("icd-only");
        }
        if (given("--no-icd")) {
            c.use_icd = false;
            if (!given("--alf")) c.alf = parse_alf_strategy("maf-only");
        }
        if (c.shots != 1 && c.shots != 2 && c.shots != 4 && c.shots != 8 && c.shots != 16) {
            throw ConfigError("shots must be one of 1, 2, 4, 8, 16");
        }
        validate(c);
        return c;
    }
};

const std::array<StreamKind, 4> kStreams{StreamKind::zs, StreamKind::maf, StreamKind::icd, StreamKind::alf};

bool stream_available(const LdcModel& m, StreamKind s) {
    if (s == StreamKind::maf) return m.config.use_maf;
    if (s == StreamKind::icd) return m.config.use_icd;
    return true;
}

struct StreamReports {
    std::vector<std::pair<StreamKind, EvalReport>> reports;

    json accuracies() const {
        json j = json::object();
        for (StreamKind s : kStreams) j[std::string(to_string(s))] = nullptr;
        for (const auto& [s, r] : reports) j[std::string(to_string(s))] = r.accuracy;
        return j;
    }
    json full() const {
        json j = json::object();
        for (const auto& [s, r] : reports) j[std::string(to_string(s))] = to_json(r);
        return j;
    }
    const EvalReport& get(StreamKind s) const {
        for (const auto& [k, r] : reports)
            if (k == s) return r;
        throw ConfigError("stream '" + std::string(to_string(s)) + "' is not available for this model");
    }
};

StreamReports evaluate_streams(const FeatureBundle& b, std::span<const std::size_t> test, const LdcModel& m,
                               std::size_t threads) {
    StreamReports out;
    for (StreamKind s : kStreams)
        if (stream_available(m, s)) out.reports.emplace_back(s, evaluate(b, test, m, s, threads));
    return out;
}

void write_confusions(const fs::path& dir, const StreamReports& r, const FeatureBundle& b) {
    for (const auto& [s, rep] : r.reports) {
        write_text(dir / ("confusion_" + std::string(to_string(s)) + ".csv"),
                   confusion_csv(rep, b.manifest.class_names));
    }
}

// ---------------------------------------------------------------------------

struct IngestCmd {
    std::string input, out;
    int run() const {
        const FeatureBundle b = ingest_json_file(input);
        ensure_parent(out);
        write_bundle(b, out);
        const json result{{"schema_version", kResultSchema}, {"command", "ingest"},   {"input", input},
                          {"bundle", out},                   {"summary", bundle_summary(b)}};
        write_json(fs::path(out).replace_extension(".result.json"), result);
        std::cout << result.dump(2) << "\n";
        return kOk;
    }
};

struct SynthCmd {
    std::string spec_path, out;
    std::optional<std::uint64_t> seed;
    int run() const {
        SynthSpec spec = spec_path.empty() ? default_synth_spec() : synth_spec_from_json(read_json(spec_path));
        if (seed) spec.seed = *seed;
        const SynthResult sr = gen_synthetic(spec);
        ensure_parent(out);
        write_bundle(sr.bundle, out);
        const fs::path truth_path = fs::path(out).parent_path() / "ground_truth.json";
        json truth = to_json(sr.truth);
        truth["spec"] = to_json(spec);
        write_json(truth_path, truth);
        const json result{{"schema_version", kResultSchema},
                          {"command", "synth"},
                          {"spec", to_json(spec)},
                          {"bundle", out},
                          {"ground_truth", truth_path.string()},
                          {"flipped_classes", sr.truth.flipped_classes},
                          {"summary", bundle_summary(sr.bundle)}};
        write_json(fs::path(out).replace_extension(".result.json"), result);
        std::cout << result.dump(2) << "\n";
        return kOk;
    }
};

struct TrainCmd {
    std::string bundle_path, out_dir = "ldc_run", truth_path;
    std::size_t threads = 0;
    TrainFlags flags;

    int run() const {
        const TrainConfig cfg = [&] {
            TrainConfig c = flags.resolve();
            c.threads = threads;
            return c;
        }();
        const FeatureBundle b = read_bundle(bundle_path);
        const EpisodeSplit split = sample_few_shot(b, cfg.shots, cfg.seed);
        const TrainResult tr = train(b, split, cfg);
        const StreamReports reports = evaluate_streams(b, split.test, tr.model, cfg.threads);

        const fs::path dir(out_dir);
        fs::create_directories(dir);
        save_model(tr.model, dir / "model.json");
        write_json(dir / "config.json", to_json(cfg));
        write_json(dir / "loss_trace.json", to_json(tr.trace));
        write_confusions(dir, reports, b);

        json result{{"schema_version", kResultSchema},
                    {"command", "train"},
                    {"bundle", bundle_path},
                    {"config", to_json(cfg)},
                    {"train_size", split.train.size()},
                    {"test_size", split.test.size()},
                    {"final_loss", tr.trace.empty() ? json(nullptr) : json(tr.trace.back().mean_loss)},
                    {"accuracy", reports.accuracies()},
                    {"reports", reports.full()}};
        if (!truth_path.empty()) {
            const SynthTruth truth = synth_truth_from_json(read_json(truth_path));
            try {
                result["oracle"] = to_json(oracle_report(b, truth, split.test, &tr.model));
            } catch (const UndefinedCorrelationError&) {
                result["oracle"] = to_json(oracle_report(b, truth, split.test));
            }
        }
        write_json(dir / "result.json", result);
        std::cout << result["accuracy"].dump() << "\n";
        return kOk;
    }
};

struct EvalCmd {
    std::string bundle_path, model_path, out_dir = "ldc_eval";
    std::size_t shots = 16, threads = 0;
    std::uint64_t seed = 0;

    int run() const {
        const FeatureBundle b = read_bundle(bundle_path);
        const LdcModel m = load_model(model_path);
        const EpisodeSplit split = sample_few_shot(b, shots, seed);
        const StreamReports reports = evaluate_streams(b, split.test, m, threads);
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        write_confusions(dir, reports, b);
        const json result{{"schema_version", kResultSchema},
                          {"command", "eval"},
                          {"bundle", bundle_path},
                          {"model", model_path},
                          {"shots", shots},
                          {"seed", seed},
                          {"model_config", config_to_json(m.config)},
                          {"test_size", split.test.size()},
                          {"accuracy", reports.accuracies()},
                          {"reports", reports.full()}};
        write_json(dir / "result.json", result);
        std::cout << result["accuracy"].dump() << "\n";
        return kOk;
    }
};

struct AblationRow {
    std::string axis, variant;
    TrainConfig config;
    bool zs_only = false;
};

std::vector<AblationRow> ablation_rows(const std::vector<std::string>& axes, const TrainConfig& base) {
    std::vector<AblationRow> rows;
    auto row = [&](const std::string& axis, const std::string& variant, auto&& edit) {
        TrainConfig c = base;
        edit(c);
        validate(c);
        rows.push_back({axis, variant, c, false});
    };
    for (const std::string& axis : axes) {
        if (axis == "modules") {
            rows.push_back({axis, "zs", base, true});
            row(axis, "maf", [](TrainConfig& c) {
                c.use_icd = false;
                c.alf = parse_alf_strategy("maf-only");
            });
            row(axis, "icd", [](TrainConfig& c) {
                c.use_maf = false;
                c.alf = parse_alf_strategy("icd-only");
            });
            row(axis, "maf+icd", [](TrainConfig& c) { c.alf = parse_alf_strategy("sum"); });
            row(axis, "maf+icd+alf", [](TrainConfig& c) { c.alf = parse_alf_strategy("adaptive"); });
        } else if (axis == "losses") {
            for (const char* l : {"ce_maf,ce_icd", "ce_alf", "ce_maf,ce_icd,ce_alf", "ce_maf,ce_icd,ce_alf,sim_maf",
                                  "ce_maf,ce_icd,ce_alf,sim_icd", "all"}) {
                row(axis, l, [&](TrainConfig& c) { c.losses = parse_loss_toggles(l); });
            }
        } else if (axis == "levels") {
            for (const char* l : {"4", "3,4", "2,3,4", "all"}) {
                row(axis, l, [&](TrainConfig& c) { c.levels = parse_levels(l); });
            }
        } else if (axis == "fusion") {
            row(axis, "wf:0.25,0.25,0.25,0.25", [](TrainConfig& c) {
                c.fusion = FusionMode::weighted;
                c.betas = {0.25, 0.25, 0.25, 0.25};
            });
            row(axis, "wf:0.1,0.2,0.3,0.4", [](TrainConfig& c) {
                c.fusion = FusionMode::weighted;
                c.betas = kDefaultBetas;
            });
            row(axis, "lf", [](TrainConfig& c) { c.fusion = FusionMode::learnable; });
        } else if (axis == "icd-branches") {
            for (const char* v : {"a1,a3,res", "a2,a3,res", "a1,a2,res", "a1,a2,a3", "all"}) {
                row(axis, v, [&](TrainConfig& c) { c.icd_branches = parse_icd_branches(v); });
            }
        } else if (axis == "alf") {
            for (const char* v : {"icd-only", "maf-only", "sum", "fixed:0.5", "adaptive"}) {
                row(axis, v, [&](TrainConfig& c) { c.alf = parse_alf_strategy(v); });
            }
        } else {
            throw ConfigError("unknown ablation axis '" + axis +
                              "' (expected modules, losses, levels, fusion, icd-branches, alf)");
        }
    }
    return rows;
}

std::string csv_cell(const json& v) {
    if (v.is_null()) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
    return buf;
}

struct AblateCmd {
    std::string bundle_path, axes = "modules,losses,levels,fusion,icd-branches,alf", out_dir = "ldc_ablate";
    std::size_t threads = 0;
    TrainFlags flags;

    int run() const {
        TrainConfig base = flags.resolve();
        base.threads = threads;
        const std::vector<AblationRow> rows = ablation_rows(split_list(axes), base);
        const FeatureBundle b = read_bundle(bundle_path);
        const EpisodeSplit split = sample_few_shot(b, base.shots, base.seed);

        std::string csv = "axis,variant,seed,shots,accuracy,zs,maf,icd,alf\n";
        json results = json::array();
        for (const AblationRow& r : rows) {
            const TrainResult tr = train(b, split, r.zs_only ? [&] {
                TrainConfig c = r.config;
                c.epochs = 0;
                return c;
            }() : r.config);
            const StreamReports reports = evaluate_streams(b, split.test, tr.model, threads);
            const json acc = reports.accuracies();
            const double headline = r.zs_only ? acc["zs"].get<double>() : acc["alf"].get<double>();
            csv += r.axis + ",\"" + r.variant + "\"," + std::to_string(r.config.seed) + "," +
                   std::to_string(r.config.shots) + "," + csv_cell(headline) + "," + csv_cell(acc["zs"]) + "," +
                   (r.zs_only ? ",," : csv_cell(acc["maf"]) + "," + csv_cell(acc["icd"]) + "," + csv_cell(acc["alf"])) +
                   "\n";
            results.push_back({{"axis", r.axis},
                               {"variant", r.variant},
                               {"config", to_json(r.config)},
                               {"accuracy", headline},
                               {"streams", acc}});
            std::cerr << r.axis << " " << r.variant << " " << csv_cell(headline) << "\n";
        }
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        write_text(dir / "ablation.csv", csv);
        write_json(dir / "result.json", {{"schema_version", kResultSchema},
                                         {"command", "ablate"},
                                         {"bundle", bundle_path},
                                         {"config", to_json(base)},
                                         {"axes", split_list(axes)},
                                         {"rows", results}});
        std::cout << csv;
        return kOk;
    }
};

struct GradcheckCmd {
    std::size_t seeds = 50;
    double lambda = 1.0;
    std::string losses = "all", out_dir;
    double tolerance = 1e-4;

    int run() const {
        const GradSuiteReport r = run_gradient_suite(seeds, lambda, parse_loss_toggles(losses));
        const bool ok = r.max_rel_error < tolerance;
        json result = to_json(r);
        result["schema_version"] = kResultSchema;
        result["command"] = "gradcheck";
        result["config"] = {{"seeds", seeds}, {"lambda", lambda}, {"losses", losses}, {"tolerance", tolerance}};
        result["pass"] = ok;
        if (!out_dir.empty()) write_json(fs::path(out_dir) / "result.json", result);
        for (const TensorCheck& t : r.tensors) {
            std::printf("%-24s %6zu  %.3e %s\n", t.name.c_str(), t.size, t.max_rel_error,
                        t.max_rel_error < tolerance ? "ok" : "FAIL");
        }
        std::printf("max relative error %.3e over %zu runs: %s\n", r.max_rel_error, r.runs, ok ? "pass" : "fail");
        return ok ? kOk : kCheckFailed;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot logit deconfusion: training and evaluation tools"};
    app.require_subcommand(1);

    IngestCmd ingest;
    auto* ingest_app = app.add_subcommand("ingest", "convert a JSON feature dump into a binary bundle");
    ingest_app->add_option("input", ingest.input, "JSON feature file")->required();
    ingest_app->add_option("--out", ingest.out, "output bundle path")->required();

    SynthCmd synth;
    auto* synth_app = app.add_subcommand("synth", "generate a synthetic bundle with planted confusion");
    synth_app->add_option("--spec", synth.spec_path, "synthetic spec JSON (default spec when omitted)");
    synth_app->add_option("--out", synth.out, "output bundle path")->required();
    synth_app->add_option("--seed", synth.seed, "override the spec seed");

    TrainCmd train_cmd;
    auto* train_app = app.add_subcommand("train", "train on a few-shot episode and evaluate every stream");
    train_app->add_option("--bundle", train_cmd.bundle_path, "feature bundle")->required();
    train_app->add_option("--out", train_cmd.out_dir, "output directory");
    train_app->add_option("--truth", train_cmd.truth_path, "ground_truth.json for oracle metrics");
    train_app->add_option("--threads", train_cmd.threads, "worker threads (0: all, capped by LDC_THREADS)");
    train_cmd.flags.add(*train_app);

    EvalCmd eval_cmd;
    auto* eval_app = app.add_subcommand("eval", "evaluate a saved model on the test split");
    eval_app->add_option("--bundle", eval_cmd.bundle_path, "feature bundle")->required();
    eval_app->add_option("--model", eval_cmd.model_path, "model file")->required();
    eval_app->add_option("--out", eval_cmd.out_dir, "output directory");
    eval_app->add_option("--shots", eval_cmd.shots, "episode shots")->check(CLI::IsMember({1, 2, 4, 8, 16}));
    eval_app->add_option("--seed", eval_cmd.seed, "episode seed");
    eval_app->add_option("--threads", eval_cmd.threads, "worker threads");

    AblateCmd ablate;
    auto* ablate_app = app.add_subcommand("ablate", "sweep module, loss, fusion, branch and ALF variants");
    ablate_app->add_option("--bundle", ablate.bundle_path, "feature bundle")->required();
    ablate_app->add_option("--axes", ablate.axes, "comma-separated axes");
    ablate_app->add_option("--out", ablate.out_dir, "output directory");
    ablate_app->add_option("--threads", ablate.threads, "worker threads");
    ablate.flags.add(*ablate_app);

    GradcheckCmd gradcheck;
    auto* grad_app = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    grad_app->add_option("--seeds", gradcheck.seeds, "random models per fusion mode");
    grad_app->add_option("--lambda", gradcheck.lambda, "similarity loss weight");
    grad_app->add_option("--losses", gradcheck.losses, "enabled loss terms");
    grad_app->add_option("--out", gradcheck.out_dir, "output directory for result.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*ingest_app) return ingest.run();
        if (*synth_app) return synth.run();
        if (*train_app) return train_cmd.run();
        if (*eval_app) return eval_cmd.run();
        if (*ablate_app) return ablate.run();
        if (*grad_app) return gradcheck.run();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    }
    return kConfig;
}
