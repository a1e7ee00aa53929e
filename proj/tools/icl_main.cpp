// Experiment runner for the idempotent-replay continual-learning framework.
//
// Verbs:
//   run                     train per seed, write results.json + CSVs + plots
//   dry-run                 validate config, print the resolved plan
//   compare                 seed-paired metric deltas between two result dirs
//   export-stream-manifest  dump the task stream as JSON
//
// Exit codes: 0 ok, 2 config error, 3 comparison failure, 4 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "icl/config.hpp"
#include "icl/error.hpp"
#include "icl/plots.hpp"
#include "icl/results.hpp"
#include "icl/trainer.hpp"

namespace {

struct Overrides {
    std::vector<std::uint64_t> seeds;
    std::string method;
    std::optional<int> buffer;
    std::optional<double> alpha, beta, p_empty;
    std::string out;

    void apply(icl::ExperimentConfig& cfg) const {
        if (!seeds.empty()) cfg.seeds = seeds;
        if (!method.empty()) cfg.train.method = icl::method_from_string(method);
        if (buffer) cfg.train.buffer_capacity = *buffer;
        if (alpha) cfg.train.loss.alpha = *alpha;
        if (beta) cfg.train.loss.beta = *beta;
        if (p_empty) cfg.train.loss.p_empty = *p_empty;
        if (!out.empty()) cfg.out_dir = out;
        cfg.train.validate();
    }
};

void add_override_flags(CLI::App* cmd, Overrides& ov, bool with_out = true) {
    cmd->add_option("--seed", ov.seeds, "override the seed list");
    cmd->add_option("--method", ov.method,
                    "finetune|finetune_plain|er|er_id|bfp_id|naive_id");
    cmd->add_option("--buffer", ov.buffer, "replay buffer capacity");
    cmd->add_option("--alpha", ov.alpha, "idempotence distillation weight");
    cmd->add_option("--beta", ov.beta, "replay loss weight");
    cmd->add_option("--p-empty", ov.p_empty, "probability of the uniform second input");
    if (with_out) cmd->add_option("--out", ov.out, "output directory");
}

void print_plan(const icl::ExperimentConfig& cfg) {
    const auto data = cfg.load_dataset();
    std::cout << "resolved config:\n" << cfg.resolved_text() << "\n";
    std::cout << "dataset: " << cfg.dataset.name << ", train " << data.train.size()
              << " samples, test " << data.test.size() << " samples, " << data.train.n_classes
              << " classes, input " << data.train.shape.c << "x" << data.train.shape.h << "x"
              << data.train.shape.w << "\n";
    const auto stream = cfg.build_stream(data.train, cfg.seeds.front());
    std::cout << "stream (seed " << cfg.seeds.front() << "):\n";
    for (const auto& task : stream.tasks) {
        std::cout << "  task " << task.task_id << ": classes {";
        for (std::size_t i = 0; i < task.classes.size(); ++i)
            std::cout << (i ? "," : "") << task.classes[i];
        std::cout << "}, " << task.train_samples.size() << " train samples\n";
    }
    std::cout << "seeds:";
    for (auto s : cfg.seeds) std::cout << " " << s;
    std::cout << "\noutput: " << cfg.out_dir << "\n";
}

int do_run(const icl::ExperimentConfig& cfg, bool resume) {
    const auto data = cfg.load_dataset();
    icl::ResultBundle bundle;
    bundle.method = icl::to_string(cfg.train.method);
    bundle.protocol = icl::to_string(cfg.stream.protocol);

    for (auto seed : cfg.seeds) {
        const auto stream = cfg.build_stream(data.train, seed);
        icl::TrainConfig train_cfg = cfg.train;
        train_cfg.seed = seed;
        icl::RunOptions opts;
        opts.persist_dir = cfg.out_dir + "/seed" + std::to_string(seed);
        opts.resume = resume;
        opts.ece_bins = cfg.ece_bins;

        std::cout << "[seed " << seed << "] training " << icl::to_string(cfg.train.method)
                  << " on " << icl::to_string(cfg.stream.protocol) << " stream ("
                  << stream.n_tasks() << " tasks)\n";
        auto res = icl::run_experiment(stream, data.train, data.test, train_cfg, opts);
        std::cout << std::fixed << std::setprecision(4) << "[seed " << seed
                  << "] FAA = " << res.faa_value
                  << ", FF = " << (res.ff_value ? std::to_string(*res.ff_value) : "n/a")
                  << ", ECE = " << res.ece_value << " (" << std::setprecision(1)
                  << res.total_seconds << "s)\n";
        bundle.seeds.push_back(std::move(res));
    }

    bundle.write(cfg.out_dir, cfg, cfg.ece_bins);
    icl::write_plots(bundle, cfg.plots, cfg.out_dir + "/plots");

    const auto faa = bundle.faa_agg();
    const auto ff = bundle.ff_agg();
    const auto ece = bundle.ece_agg();
    std::cout << std::fixed << std::setprecision(4) << "aggregate over " << cfg.seeds.size()
              << " seed(s): FAA " << faa.mean << " +/- " << faa.stddev << ", FF " << ff.mean
              << " +/- " << ff.stddev << ", ECE " << ece.mean << " +/- " << ece.stddev << "\n"
              << "results: " << cfg.out_dir << "/results.json\n";
    return 0;
}

std::string results_path(std::string p) {
    if (std::filesystem::is_directory(p)) return p + "/results.json";
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"idempotent-replay continual learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    bool resume = false;
    bool dry = false;

    auto* run = app.add_subcommand("run", "train and write results");
    run->add_option("--config", config_path, "experiment config file")->required();
    add_override_flags(run, ov);
    run->add_flag("--resume", resume, "reuse per-task states in the output directory");
    run->add_flag("--dry-run", dry, "validate and print the plan, no training");

    auto* dryrun = app.add_subcommand("dry-run", "validate config and print the plan");
    dryrun->add_option("--config", config_path, "experiment config file")->required();
    add_override_flags(dryrun, ov);

    std::string path_a, path_b;
    auto* cmp = app.add_subcommand("compare", "seed-paired deltas of two result bundles");
    cmp->add_option("bundle_a", path_a, "results.json or run directory")->required();
    cmp->add_option("bundle_b", path_b, "results.json or run directory")->required();

    std::string manifest_out;
    auto* exp = app.add_subcommand("export-stream-manifest", "dump the task stream as JSON");
    exp->add_option("--config", config_path, "experiment config file")->required();
    exp->add_option("--out", manifest_out, "output file (default: stdout)");
    add_override_flags(exp, ov, /*with_out=*/false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed() || dryrun->parsed()) {
            auto cfg = icl::ExperimentConfig::from_file(config_path);
            ov.apply(cfg);
            if (dryrun->parsed() || dry) {
                print_plan(cfg);
                return 0;
            }
            return do_run(cfg, resume);
        }
        if (cmp->parsed()) {
            const auto a = icl::ResultBundle::read(results_path(path_a));
            const auto b = icl::ResultBundle::read(results_path(path_b));
            const auto report = icl::compare_bundles(a, b);
            std::cout << report.to_text(path_a, path_b);
            return report.directional_pass ? 0 : 3;
        }
        if (exp->parsed()) {
            auto cfg = icl::ExperimentConfig::from_file(config_path);
            ov.apply(cfg);
            const auto data = cfg.load_dataset();
            const auto stream = cfg.build_stream(data.train, cfg.seeds.front());
            if (manifest_out.empty()) {
                std::cout << stream.manifest_json() << "\n";
            } else {
                std::ofstream f(manifest_out);
                if (!f) throw icl::IoError("cannot write " + manifest_out);
                f << stream.manifest_json() << "\n";
            }
            return 0;
        }
    } catch (const icl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
