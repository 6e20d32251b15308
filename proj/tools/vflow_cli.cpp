// Experiment harness: training, evaluation, generation, ablation sweeps,
// and the gradient oracle suite.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vflow/gradcheck.hpp"
#include "vflow/model_gradcheck.hpp"
#include "vflow/harness.hpp"

using namespace vflow;

namespace {

int run_train(const std::string& config_path, const std::string& out_dir,
              std::optional<uint64_t> seed) {
    ExperimentConfig cfg = load_config(config_path);
    if (seed) {
        json j = cfg.raw;
        j["train"]["seed"] = *seed;
        cfg = parse_config(j);
    }
    TrainedArtifacts art = cmd_train(cfg, out_dir);
    std::cout << "checkpoint: " << art.checkpoint_path << "\n"
              << "loss csv:   " << art.loss_csv_path << "\n"
              << "final loss: " << art.final_loss << " (" << art.wall_s << " s)\n";
    if (art.status != TrainStatus::Ok) {
        std::cerr << "training aborted on a non-finite loss; checkpoint holds the last good step\n";
        return 2;
    }
    return 0;
}

int run_eval(const std::string& config_path, const std::string& ckpt, const std::string& out_dir,
             std::optional<double> tau) {
    ExperimentConfig cfg = load_config(config_path);
    std::vector<ResultRow> rows = cmd_eval(cfg, ckpt, tau);
    std::filesystem::create_directories(out_dir);
    const std::string csv = out_dir + "/results.csv";
    write_results_csv(csv, rows, /*append=*/std::filesystem::exists(csv));
    for (const auto& r : rows) {
        if (r.seed == "mean" || r.seed == "std") {
            std::cout << r.metric << " " << r.seed << " = " << r.value << "\n";
        }
    }
    std::cout << "rows appended to " << csv << "\n";
    return 0;
}

int run_generate(const std::string& config_path, const std::string& ckpt,
                 const std::string& out_dir, int n, std::optional<double> tau,
                 std::optional<uint64_t> seed) {
    ExperimentConfig cfg = load_config(config_path);
    check_checkpoint_compatible(cfg, ckpt);
    ParamSet params = load_checkpoint(ckpt);
    Tensor samples = eval_generate(cfg, params, n, tau.value_or(cfg.eval_tau),
                                   seed.value_or(cfg.eval_seeds.front()));
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/samples.csv";
    std::ofstream os(path);
    os << std::setprecision(9);
    for (int i = 0; i < samples.dim(0); ++i) {
        for (int c = 0; c < samples.dim(1); ++c) {
            os << (c ? "," : "") << samples[static_cast<int64_t>(i) * samples.dim(1) + c];
        }
        os << "\n";
    }
    std::cout << "wrote " << samples.dim(0) << " samples to " << path << "\n";
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& out_dir) {
    ExperimentConfig cfg = load_config(config_path);
    AblateOutcome out = cmd_ablate(cfg, out_dir);
    std::filesystem::create_directories(out_dir);
    const std::string csv = out_dir + "/ablation.csv";
    write_results_csv(csv, out.rows);
    std::cout << out.rows.size() << " rows (" << out.n_trainings << " trainings) -> " << csv << "\n";
    return 0;
}

int run_gradcheck() {
    GradcheckReport report = gradcheck_primitives(20, 7);
    for (const auto& c : report.cases) {
        std::printf("%-12s max rel err %.3e  %s\n", c.primitive.c_str(), c.max_rel_err,
                    c.pass ? "ok" : "FAIL");
    }
    const double model_err = model_loss_fd_error(64);
    std::printf("%-12s max rel err %.3e  %s\n", "model_loss", model_err,
                model_err <= 1e-3 ? "ok" : "FAIL");

    const bool pass = report.all_pass() && model_err <= 1e-3;
    std::printf("gradcheck: %s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int run_tasks() {
    auto kind_name = [](DistKind k) {
        switch (k) {
            case DistKind::Gaussian: return "gaussian";
            case DistKind::GaussianMixture: return "gaussian_mixture";
            case DistKind::TwoMoons: return "two_moons";
        }
        return "?";
    };
    for (const auto& name : task_names()) {
        FlowTask t = task_registry(name);
        std::printf("%-16s d_in=%-5d source=%-17s target=%s\n", name.c_str(), t.d_in,
                    kind_name(t.source.kind), kind_name(t.target.kind));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"volterra flow matching experiment harness"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_dir = "out";
    std::optional<uint64_t> seed;
    std::optional<double> tau;
    int n = 1000;

    auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory");
        if (needs_ckpt) {
            sub->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
        }
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model per the config");
    add_common(train_cmd, false);
    train_cmd->add_option("--seed", seed, "override train.seed");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--tau", tau, "override eval temperature");

    CLI::App* gen_cmd = app.add_subcommand("generate", "sample from a checkpoint");
    add_common(gen_cmd, true);
    gen_cmd->add_option("--n", n, "number of samples");
    gen_cmd->add_option("--tau", tau, "sampling temperature");
    gen_cmd->add_option("--seed", seed, "sampling seed");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the configured parameter sweep");
    add_common(ablate_cmd, false);

    app.add_subcommand("gradcheck", "finite-difference oracle suite");
    app.add_subcommand("tasks", "list registry tasks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("train")) return run_train(config_path, out_dir, seed);
        if (app.got_subcommand("eval")) return run_eval(config_path, checkpoint_path, out_dir, tau);
        if (app.got_subcommand("generate"))
            return run_generate(config_path, checkpoint_path, out_dir, n, tau, seed);
        if (app.got_subcommand("ablate")) return run_ablate(config_path, out_dir);
        if (app.got_subcommand("gradcheck")) return run_gradcheck();
        if (app.got_subcommand("tasks")) return run_tasks();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
