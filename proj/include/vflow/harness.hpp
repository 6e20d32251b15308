#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vflow/cfm.hpp"
#include "vflow/data_synth.hpp"
#include "vflow/metrics.hpp"
#include "vflow/volterra_flow.hpp"

namespace vflow {

inline constexpr const char* kVflowVersion = "0.1.0";
inline constexpr int kAssignmentCap = 2048;

using json = nlohmann::json;

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Flat experiment description; everything a run needs, hashable.
struct ExperimentConfig {
    std::string task_name;
    std::string method = "calmflow";  // calmflow | cfm
    FlowTask task;

    ClmConfig clm;
    VaeConfig vae;
    TrainConfig train_cfg;

    VectorFieldConfig cfm_net;
    CfmTrainConfig cfm_train;
    OdeSolveConfig solve;

    std::vector<std::string> metrics{"mmd", "w2"};
    int n_eval = 1000;
    std::vector<uint64_t> eval_seeds{1, 2, 3, 4, 5};
    double eval_tau = 0.2;

    std::string ablate_param;           // empty: no sweep
    std::vector<double> ablate_values;

    json raw;  // canonical source for the digest
};

namespace detail {

template <typename T>
T field_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError("field \"" + key + "\": " + e.what());
    }
}

inline const json& section(const json& j, const std::string& name, const json& empty) {
    if (!j.contains(name)) return empty;
    if (!j.at(name).is_object()) throw ParseError("section \"" + name + "\" must be an object");
    return j.at(name);
}

}  // namespace detail

// FNV-1a over the canonical (key-sorted) JSON dump. Stable under field
// reordering in the source file.
inline std::string config_digest(const json& j) {
    const std::string dump = j.dump();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline ExperimentConfig parse_config(const json& j) {
    static const json empty = json::object();
    ExperimentConfig cfg;
    cfg.raw = j;

    if (!j.contains("task") || !j.at("task").is_string()) {
        throw ParseError("missing required string field \"task\"");
    }
    cfg.task_name = j.at("task").get<std::string>();
    cfg.task = task_registry(cfg.task_name);
    cfg.method = detail::field_or<std::string>(j, "method", "calmflow");
    if (cfg.method != "calmflow" && cfg.method != "cfm") {
        throw ParseError("method must be \"calmflow\" or \"cfm\", got \"" + cfg.method + "\"");
    }

    const json& model = detail::section(j, "model", empty);
    cfg.clm.d_model = detail::field_or(model, "d_model", 32);
    cfg.clm.n_layers = detail::field_or(model, "n_layers", 4);
    cfg.clm.n_heads = detail::field_or(model, "n_heads", 1);
    cfg.clm.d_ff = detail::field_or(model, "d_ff", 128);
    cfg.clm.dropout = detail::field_or(model, "dropout", 0.0f);
    cfg.vae.d_latent = detail::field_or(model, "d_latent", 16);
    cfg.vae.d_hidden = detail::field_or(model, "d_hidden", 32);

    const json& train = detail::section(j, "train", empty);
    cfg.train_cfg.steps = detail::field_or(train, "steps", 3000);
    cfg.train_cfg.batch_size = detail::field_or(train, "batch_size", 32);
    cfg.train_cfg.lr = detail::field_or(train, "lr", 1e-3);
    cfg.train_cfg.beta = detail::field_or(train, "beta", 1e-3f);
    cfg.train_cfg.seed = detail::field_or<uint64_t>(train, "seed", 1);
    cfg.task.n_time_points = detail::field_or(train, "n_time_points", cfg.task.n_time_points);
    cfg.task.n_trajectories = detail::field_or(train, "n_trajectories", cfg.task.n_trajectories);
    cfg.task.n_space_tokens = detail::field_or(train, "n_space_tokens", cfg.task.n_space_tokens);
    if (train.contains("labels")) {
        cfg.task.labels = train.at("labels").get<std::vector<std::string>>();
    }
    cfg.train_cfg.clm = cfg.clm;
    cfg.train_cfg.vae = cfg.vae;

    const json& cfm = detail::section(j, "cfm", empty);
    cfg.cfm_net.width = detail::field_or(cfm, "width", 1024);
    cfg.cfm_net.depth = detail::field_or(cfm, "depth", 4);
    cfg.cfm_train.steps = detail::field_or(cfm, "steps", cfg.train_cfg.steps);
    cfg.cfm_train.batch_size = detail::field_or(cfm, "batch_size", 128);
    cfg.cfm_train.lr = detail::field_or(cfm, "lr", 1e-3);
    cfg.cfm_train.seed = cfg.train_cfg.seed;
    cfg.cfm_train.ot_pairing = detail::field_or(cfm, "ot_pairing", false);
    cfg.solve.method = ode_method_from_string(detail::field_or<std::string>(cfm, "solver", "dopri5"));
    cfg.solve.steps = detail::field_or(cfm, "solver_steps", 100);
    cfg.solve.rtol = detail::field_or(cfm, "rtol", 1e-5);
    cfg.solve.atol = detail::field_or(cfm, "atol", 1e-5);
    cfg.solve.max_evals = detail::field_or(cfm, "max_evals", 100000);

    const json& eval = detail::section(j, "eval", empty);
    if (eval.contains("metrics")) cfg.metrics = eval.at("metrics").get<std::vector<std::string>>();
    cfg.n_eval = detail::field_or(eval, "n_eval", 1000);
    if (eval.contains("seeds")) cfg.eval_seeds = eval.at("seeds").get<std::vector<uint64_t>>();
    if (cfg.eval_seeds.empty()) throw ParseError("eval.seeds must not be empty");
    cfg.eval_tau = detail::field_or(eval, "tau", 0.2);

    const json& ablate = detail::section(j, "ablate", empty);
    cfg.ablate_param = detail::field_or<std::string>(ablate, "param", "");
    if (ablate.contains("values")) cfg.ablate_values = ablate.at("values").get<std::vector<double>>();

    cfg.clm.validate();
    cfg.vae.validate();
    cfg.train_cfg.validate();
    cfg.task.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return parse_config(j);
}

// One long-form result row; the digest + seed pair reproduces any value.
struct ResultRow {
    std::string digest;
    std::string task;
    std::string method;
    std::string seed;   // numeric, or "mean"/"std" aggregate rows
    std::string metric;
    double value = 0;
    std::string param;        // swept parameter name, if any
    std::string param_value;  // swept value, if any
    double wall_s = 0;
};

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows,
                              bool append = false) {
    const bool exists = std::filesystem::exists(path);
    std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open results csv: " + path);
    if (!append || !exists) os << "digest,task,method,seed,metric,value,param,param_value,wall_s\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.digest << "," << r.task << "," << r.method << "," << r.seed << "," << r.metric
           << "," << r.value << "," << r.param << "," << r.param_value << "," << r.wall_s << "\n";
    }
}

// ---- training entry point ----

struct TrainedArtifacts {
    std::string checkpoint_path;
    std::string sidecar_path;
    std::string loss_csv_path;
    double wall_s = 0;
    double final_loss = 0;
    TrainStatus status = TrainStatus::Ok;
};

inline TrainedArtifacts cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string digest = config_digest(cfg.raw);
    TrainedArtifacts art;
    art.checkpoint_path = out_dir + "/checkpoint.vfc";
    art.sidecar_path = out_dir + "/run.json";
    art.loss_csv_path = out_dir + "/loss.csv";

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<StepLoss> losses;
    if (cfg.method == "calmflow") {
        TrainOutcome out = train(cfg.task, cfg.train_cfg);
        art.status = out.status;
        losses = out.losses;
        save_checkpoint(art.checkpoint_path, out.model.params);
    } else {
        CfmTrainResult out = train_cfm(cfg.task, cfg.cfm_net, cfg.cfm_train);
        art.status = out.status;
        losses = out.losses;
        save_checkpoint(art.checkpoint_path, out.net.params);
    }
    art.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.final_loss = losses.empty() ? std::nan("") : losses.back().loss;
    write_loss_csv(art.loss_csv_path, losses);

    json sidecar{{"digest", digest},
                 {"task", cfg.task_name},
                 {"method", cfg.method},
                 {"seed", cfg.train_cfg.seed},
                 {"version", kVflowVersion},
                 {"wall_s", art.wall_s},
                 {"final_loss", art.final_loss},
                 {"status", art.status == TrainStatus::Ok ? "ok" : "aborted_non_finite"},
                 {"steps", static_cast<int>(losses.size())}};
    std::ofstream os(art.sidecar_path);
    os << sidecar.dump(2) << "\n";
    return art;
}

// ---- evaluation ----

struct CompatibilityError : std::runtime_error {
    explicit CompatibilityError(const std::string& msg)
        : std::runtime_error("compatibility error: " + msg) {}
};

inline void check_checkpoint_compatible(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    const std::string sidecar_path =
        (std::filesystem::path(ckpt_path).parent_path() / "run.json").string();
    if (!std::filesystem::exists(sidecar_path)) {
        throw CompatibilityError("no run.json next to " + ckpt_path + "; cannot verify the digest");
    }
    std::ifstream is(sidecar_path);
    json sidecar = json::parse(is);
    const std::string have = sidecar.value("digest", "");
    const std::string want = config_digest(cfg.raw);
    if (have != want) {
        throw CompatibilityError("checkpoint digest " + have + " does not match config digest " +
                                 want);
    }
}

// Generated samples for one eval seed, dispatched per method.
inline Tensor eval_generate(const ExperimentConfig& cfg, const ParamSet& params, int n,
                            double tau, uint64_t seed) {
    if (cfg.method == "calmflow") {
        FlowModel model = build_flow_model(cfg.task, cfg.clm, cfg.vae, cfg.train_cfg.beta,
                                           cfg.train_cfg.seed);
        model.params = params;
        Rng rng(seed, 90);
        return generate(model, cfg.task, n, tau, rng).samples;
    }
    VectorFieldConfig net_cfg = cfg.cfm_net;
    net_cfg.d_in = cfg.task.d_in;
    VectorFieldNet net{net_cfg, params};
    return generate_cfm(net, cfg.task, n, cfg.solve, seed).samples;
}

inline double eval_metric(const std::string& name, const Tensor& gen, const Tensor& target,
                          uint64_t seed) {
    if (name == "mmd") return mmd_rbf(gen, target);
    if (name == "admmd") return adaptive_mmd(gen, target);
    if (name == "w2") return wasserstein2(gen, target);
    if (name == "r2") return mean_profile_correlations(gen, target).r_squared;
    if (name == "pearson") return mean_profile_correlations(gen, target).pearson;
    if (name == "spearman") return mean_profile_correlations(gen, target).spearman;
    if (name == "ckld") return cluster_kld(gen, target, 8, seed);
    throw ParseError("unknown metric \"" + name + "\" (mmd, admmd, w2, r2, pearson, spearman, ckld)");
}

// Per-seed rows plus mean/std aggregate rows per metric.
inline std::vector<ResultRow> cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                                       std::optional<double> tau_override = std::nullopt,
                                       bool check_digest = true) {
    if (cfg.n_eval > kAssignmentCap) {
        throw ContractError("n_eval " + std::to_string(cfg.n_eval) +
                            " exceeds the assignment solver cap " + std::to_string(kAssignmentCap));
    }
    if (check_digest) check_checkpoint_compatible(cfg, ckpt_path);
    ParamSet params = load_checkpoint(ckpt_path);
    const std::string digest = config_digest(cfg.raw);
    const double tau = tau_override.value_or(cfg.eval_tau);

    std::vector<ResultRow> rows;
    std::vector<std::vector<double>> per_metric(cfg.metrics.size());
    for (uint64_t seed : cfg.eval_seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor gen = eval_generate(cfg, params, cfg.n_eval, tau, seed);
        Tensor target = sample(cfg.task.target, cfg.n_eval, seed + 7919);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (size_t m = 0; m < cfg.metrics.size(); ++m) {
            const double v = eval_metric(cfg.metrics[m], gen, target, seed);
            per_metric[m].push_back(v);
            rows.push_back({digest, cfg.task_name, cfg.method, std::to_string(seed),
                            cfg.metrics[m], v, "", "", wall});
        }
    }
    for (size_t m = 0; m < cfg.metrics.size(); ++m) {
        double mean = 0;
        for (double v : per_metric[m]) mean += v;
        mean /= static_cast<double>(per_metric[m].size());
        double var = 0;
        for (double v : per_metric[m]) var += (v - mean) * (v - mean);
        const double std_dev =
            per_metric[m].size() > 1 ? std::sqrt(var / (static_cast<double>(per_metric[m].size()) - 1)) : 0.0;
        rows.push_back({digest, cfg.task_name, cfg.method, "mean", cfg.metrics[m], mean, "", "", 0});
        rows.push_back({digest, cfg.task_name, cfg.method, "std", cfg.metrics[m], std_dev, "", "", 0});
    }
    return rows;
}

// ---- ablation sweeps ----

struct AblateOutcome {
    std::vector<ResultRow> rows;
    int n_trainings = 0;  // tau sweeps reuse one checkpoint
};

inline ExperimentConfig with_ablate_value(const ExperimentConfig& base, const std::string& param,
                                          double value) {
    json j = base.raw;
    if (param == "n_time_points" || param == "n_trajectories" || param == "n_space_tokens") {
        j["train"][param] = static_cast<int>(value);
    } else if (param == "beta") {
        j["train"]["beta"] = value;
    } else if (param == "tau") {
        j["eval"]["tau"] = value;
    } else {
        throw ParseError("unknown sweep parameter \"" + param +
                         "\" (tau, n_time_points, n_trajectories, n_space_tokens, beta)");
    }
    return parse_config(j);
}

// tau sweeps train once and re-evaluate; training-time parameters retrain
// per swept value. Emits (param, value, seed, metric) long-form rows.
inline AblateOutcome cmd_ablate(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.ablate_param.empty() || cfg.ablate_values.empty()) {
        throw ParseError("ablate section needs \"param\" and non-empty \"values\"");
    }
    // validates the name up front
    with_ablate_value(cfg, cfg.ablate_param, cfg.ablate_values.front());

    AblateOutcome out;
    const bool inference_only = cfg.ablate_param == "tau";
    std::string shared_ckpt;
    if (inference_only) {
        TrainedArtifacts art = cmd_train(cfg, out_dir + "/base");
        ++out.n_trainings;
        shared_ckpt = art.checkpoint_path;
    }
    for (double value : cfg.ablate_values) {
        ExperimentConfig run_cfg = with_ablate_value(cfg, cfg.ablate_param, value);
        std::ostringstream tag;
        tag << cfg.ablate_param << "_" << value;
        std::string ckpt = shared_ckpt;
        if (!inference_only) {
            TrainedArtifacts art = cmd_train(run_cfg, out_dir + "/" + tag.str());
            ++out.n_trainings;
            ckpt = art.checkpoint_path;
        }
        // tau rows evaluate the shared checkpoint trained under the base
        // config, whose digest the sidecar carries
        std::vector<ResultRow> rows =
            inference_only ? cmd_eval(cfg, ckpt, value) : cmd_eval(run_cfg, ckpt);
        std::ostringstream vs;
        vs << value;
        for (auto& r : rows) {
            if (r.seed == "mean" || r.seed == "std") continue;
            r.param = cfg.ablate_param;
            r.param_value = vs.str();
            out.rows.push_back(r);
        }
    }
    return out;
}

}  // namespace vflow
