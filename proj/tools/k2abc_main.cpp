// Command-line driver: simulate benchmark models, run ABC algorithms with
// fixed or tuned hyperparameters, evaluate posterior predictive summary
// error, and compute standalone MMD between two datasets.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "k2abc/abc.hpp"
#include "k2abc/harness.hpp"
#include "k2abc/io.hpp"
#include "k2abc/kernels.hpp"
#include "k2abc/mmd.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string algo;
};

k2abc::ExperimentConfig load_config(const CommonOpts& opts) {
    k2abc::ExperimentConfig cfg = k2abc::ExperimentConfig::load(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.seed_set = true;
    }
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    if (!opts.algo.empty()) cfg.algorithm.id = opts.algo;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON")
        ->required(config_required);
    cmd->add_option("--seed", opts.seed, "master seed (overrides config)");
    cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
    cmd->add_option("--algo", opts.algo, "algorithm id (overrides config)")
        ->check(CLI::IsMember({"k2", "k2-lin", "k2-rf", "rej", "soft", "sl", "kabc", "sa"}));
}

int cmd_simulate(const CommonOpts& opts) {
    k2abc::ExperimentConfig cfg = load_config(opts);
    k2abc::ModelBundle bundle = k2abc::make_model_bundle(cfg.model);
    k2abc::ParamVector truth;
    k2abc::Dataset data = k2abc::resolve_observed_data(cfg, bundle, truth);
    std::filesystem::create_directories(cfg.output_dir);
    std::string path = cfg.output_dir + "/data.csv";
    k2abc::save_dataset(path, data);
    std::cout << "wrote " << data.size() << " observations to " << path << "\n";
    if (!truth.empty()) {
        std::cout << "true_params:";
        for (double v : truth) std::cout << " " << v;
        std::cout << "\n";
    }
    return 0;
}

int cmd_infer(const CommonOpts& opts) {
    k2abc::ExperimentConfig cfg = load_config(opts);
    if (cfg.algorithm.epsilon_grid.size() != 1 || cfg.kernel.gamma_grid.size() > 1)
        throw k2abc::ConfigError(
            "infer: requires fixed hyperparameters (single epsilon, no kernel grid); use tune");
    k2abc::RunReport report = k2abc::run_experiment(cfg);
    std::cout << "posterior mean:";
    for (double v : report.posterior_mean_natural) std::cout << " " << v;
    std::cout << "\noutputs in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_tune(const CommonOpts& opts) {
    k2abc::ExperimentConfig cfg = load_config(opts);
    k2abc::RunReport report = k2abc::run_experiment(cfg);
    std::cout << "scores (" << report.tuning_mode << "):\n";
    for (const auto& ts : report.tune_scores) {
        std::printf("  epsilon=%-12g", ts.epsilon);
        if (ts.gamma > 0.0) std::printf(" gamma=%-12g", ts.gamma);
        if (ts.failed)
            std::printf(" failed\n");
        else
            std::printf(" score=%g\n", ts.score);
    }
    std::printf("chosen epsilon=%g", report.chosen_epsilon);
    if (report.chosen_gamma > 0.0) std::printf(" gamma=%g", report.chosen_gamma);
    std::cout << "\nposterior mean:";
    for (double v : report.posterior_mean_natural) std::cout << " " << v;
    std::cout << "\noutputs in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& report_path, std::size_t repeats) {
    k2abc::ExperimentConfig cfg = load_config(opts);
    std::ifstream in(report_path);
    if (!in) throw k2abc::ConfigError("eval: cannot open report '" + report_path + "'");
    k2abc::json report_json = k2abc::json::parse(in);
    if (!report_json.contains("posterior_mean"))
        throw k2abc::ConfigError("eval: report has no posterior_mean");
    k2abc::ParamVector theta_hat = report_json.at("posterior_mean").get<k2abc::ParamVector>();

    k2abc::ModelBundle bundle = k2abc::make_model_bundle(cfg.model);
    k2abc::ParamVector truth;
    k2abc::Dataset observed = k2abc::resolve_observed_data(cfg, bundle, truth);

    k2abc::SummaryVariant sv =
        cfg.algorithm.summary.value_or(k2abc::default_summary_for(cfg.model.id));
    k2abc::SummarySpec sspec{sv, cfg.algorithm.summary_config};

    k2abc::Rng rng = k2abc::substream(cfg.seed, "eval");
    std::vector<double> distances = k2abc::evaluate_summary_error(
        observed, bundle.sanitize_point(theta_hat), bundle.simulator_for_length(observed.size()),
        sspec.make(), repeats, rng);

    std::filesystem::create_directories(cfg.output_dir);
    std::string path = cfg.output_dir + "/summary_errors.csv";
    std::ofstream out(path);
    for (double d : distances) out << k2abc::detail::format_double(d) << "\n";

    std::vector<double> finite;
    for (double d : distances)
        if (d != k2abc::kInf) finite.push_back(d);
    std::sort(finite.begin(), finite.end());
    std::cout << "wrote " << distances.size() << " distances to " << path << "\n";
    if (!finite.empty()) {
        double median = finite.size() % 2 == 1
                            ? finite[finite.size() / 2]
                            : 0.5 * (finite[finite.size() / 2 - 1] + finite[finite.size() / 2]);
        std::cout << "median=" << median << " divergent=" << (distances.size() - finite.size())
                  << "\n";
    } else {
        std::cout << "all draws divergent\n";
    }
    return 0;
}

int cmd_mmd(const std::string& path_a, const std::string& path_b, const std::string& estimator,
            double gamma, std::size_t features, std::uint64_t seed) {
    k2abc::Dataset a = k2abc::load_dataset(path_a);
    k2abc::Dataset b = k2abc::load_dataset(path_b);
    if (gamma <= 0.0) {
        // median heuristic over the pooled observations
        k2abc::Dataset pooled(a.dim());
        for (std::size_t i = 0; i < a.size(); ++i) pooled.push_back(a.row(i));
        for (std::size_t i = 0; i < b.size(); ++i) pooled.push_back(b.row(i));
        gamma = k2abc::median_heuristic(pooled);
    }
    k2abc::KernelConfig cfg{gamma};

    double value = 0.0;
    if (estimator == "quad") {
        value = k2abc::mmd2_unbiased(a, b, cfg);
    } else if (estimator == "lin") {
        value = k2abc::mmd2_linear(a, b, cfg);
    } else if (estimator == "rf") {
        k2abc::Rng rng = k2abc::substream(seed, "rff");
        k2abc::RffFeatureMap map = k2abc::sample_rff(cfg, a.dim(), features, rng);
        value = k2abc::mmd2_rff(a, b, map);
    } else {
        throw k2abc::ConfigError("mmd: estimator must be quad, lin, or rf");
    }
    std::printf("mmd2 %s gamma=%g: %.17g\n", estimator.c_str(), gamma, value);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"likelihood-free inference with MMD-weighted ABC and baselines"};
    app.require_subcommand(1);

    CommonOpts opts;
    CLI::App* simulate = app.add_subcommand("simulate", "generate data from a model");
    add_common(simulate, opts);

    CLI::App* infer = app.add_subcommand("infer", "run one algorithm at fixed hyperparameters");
    add_common(infer, opts);

    CLI::App* tune = app.add_subcommand("tune", "grid-tune hyperparameters, then run on full data");
    add_common(tune, opts);

    std::string report_path;
    std::size_t repeats = 100;
    CLI::App* eval = app.add_subcommand("eval", "summary-statistic error at a fitted posterior mean");
    add_common(eval, opts);
    eval->add_option("--report", report_path, "report.json from a previous run")->required();
    eval->add_option("--repeats", repeats, "number of posterior predictive draws");

    std::string mmd_a, mmd_b, mmd_estimator = "quad";
    double mmd_gamma = 0.0;
    std::size_t mmd_features = 50;
    std::uint64_t mmd_seed = 0;
    CLI::App* mmd = app.add_subcommand("mmd", "squared MMD between two CSV datasets");
    mmd->add_option("a", mmd_a, "first dataset CSV")->required();
    mmd->add_option("b", mmd_b, "second dataset CSV")->required();
    mmd->add_option("--estimator", mmd_estimator, "quad | lin | rf")
        ->check(CLI::IsMember({"quad", "lin", "rf"}));
    mmd->add_option("--gamma", mmd_gamma, "kernel bandwidth (default: pooled median heuristic)");
    mmd->add_option("--features", mmd_features, "random feature count for rf");
    mmd->add_option("--seed", mmd_seed, "seed for the rf feature map");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return cmd_simulate(opts);
        if (infer->parsed()) return cmd_infer(opts);
        if (tune->parsed()) return cmd_tune(opts);
        if (eval->parsed()) return cmd_eval(opts, report_path, repeats);
        if (mmd->parsed())
            return cmd_mmd(mmd_a, mmd_b, mmd_estimator, mmd_gamma, mmd_features, mmd_seed);
    } catch (const k2abc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
