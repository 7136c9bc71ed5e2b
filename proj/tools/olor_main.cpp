#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "olor/config.hpp"
#include "olor/csv.hpp"
#include "olor/errors.hpp"
#include "olor/harness.hpp"
#include "olor/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace olor {
namespace {

constexpr double kGradCheckTolerance = 1e-4;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> presets;
    std::vector<std::string> assignments;  // raw key=value pairs from --set
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    bool overwrite = false;
    int jobs = 1;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value configuration file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--preset", args.presets,
                    "named hyper-parameter preset (applied after --config)");
    cmd->add_option("--set", args.assignments, "key=value override (applied last)");
    cmd->add_option("--seed", args.seeds,
                    "run seed; repeat to run once per seed under seed_<s>/ subdirectories");
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_flag("--overwrite", args.overwrite,
                  "allow writing into an existing non-empty output directory");
    cmd->add_option("--jobs", args.jobs, "worker threads for sweep cells and seed grids")
        ->check(CLI::PositiveNumber);
}

CliConfig assemble_config(const CommonArgs& args) {
    CliConfig cfg =
        args.config_path.empty() ? default_config() : parse_config_file(args.config_path);
    for (const std::string& preset : args.presets) {
        apply_preset(cfg, preset);
    }
    for (const std::string& assignment : args.assignments) {
        const auto equals = assignment.find('=');
        if (equals == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + assignment + "'");
        }
        apply_assignment(cfg, assignment.substr(0, equals), assignment.substr(equals + 1),
                         "--set");
    }
    return cfg;
}

void prepare_out_dir(const fs::path& dir, bool overwrite) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) {
            throw IoError("output path '" + dir.string() + "' exists and is not a directory");
        }
        if (!fs::is_empty(dir) && !overwrite) {
            throw IoError("output directory '" + dir.string() +
                          "' is not empty; pass --overwrite to reuse it");
        }
    } else {
        fs::create_directories(dir);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    out.flush();
    if (!out) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

void dump_dataset_csvs(const CliConfig& cfg, const fs::path& dir) {
    const Dataset upstream = generate(cfg.run.upstream);
    const Dataset downstream = generate(cfg.run.downstream);
    export_csv((dir / "upstream_train.csv").string(), upstream.train_inputs,
               upstream.train_labels);
    export_csv((dir / "upstream_valid.csv").string(), upstream.valid_inputs,
               upstream.valid_labels);
    export_csv((dir / "downstream_train.csv").string(), downstream.train_inputs,
               downstream.train_labels);
    export_csv((dir / "downstream_valid.csv").string(), downstream.valid_inputs,
               downstream.valid_labels);
}

/// Loads the configured pre-trained checkpoint, or pre-trains in process and
/// writes pretrained.ckpt + pretrain_metrics.csv next to the other outputs.
Checkpoint obtain_pretrained(const CliConfig& cfg, const fs::path& dir, json& summary) {
    if (!cfg.pretrained_checkpoint.empty()) {
        summary["pretrained_checkpoint"] = cfg.pretrained_checkpoint;
        return load_checkpoint(cfg.pretrained_checkpoint);
    }
    const TrainResult result = pretrain(cfg.run);
    write_metrics_csv((dir / "pretrain_metrics.csv").string(), result.metrics);
    save_checkpoint((dir / "pretrained.ckpt").string(), result.checkpoint);
    summary["pretrain_final_upstream_acc"] = result.metrics.back().upstream_acc;
    return result.checkpoint;
}

json run_pretrain(const CliConfig& cfg, const fs::path& dir) {
    const TrainResult result = pretrain(cfg.run);
    write_metrics_csv((dir / "pretrain_metrics.csv").string(), result.metrics);
    save_checkpoint((dir / "pretrained.ckpt").string(), result.checkpoint);
    json summary;
    summary["final_upstream_acc"] = result.metrics.back().upstream_acc;
    summary["final_train_loss"] = result.metrics.back().train_loss;
    summary["steps"] = result.checkpoint.step;
    return summary;
}

json run_finetune(const CliConfig& cfg, const fs::path& dir) {
    json summary;
    const Checkpoint pre = obtain_pretrained(cfg, dir, summary);
    const TrainResult result = finetune(cfg.run, pre);
    write_metrics_csv((dir / "finetune_metrics.csv").string(), result.metrics);
    save_checkpoint((dir / "finetuned.ckpt").string(), result.checkpoint);
    const MetricsRecord& last = result.metrics.back();
    summary["method"] = to_string(cfg.run.method);
    summary["final_downstream_acc"] = last.downstream_acc;
    summary["final_upstream_acc"] = last.upstream_acc;
    summary["final_discrepancy"] = last.discrepancy;
    return summary;
}

json run_forgetting(const CliConfig& cfg, const fs::path& dir, int jobs) {
    const ForgettingReport report = forgetting_test(cfg.run, cfg.methods, cfg.seeds, jobs);
    write_forgetting_csv((dir / "forgetting.csv").string(), report);

    json summary;
    json per_method = json::object();
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
        double downstream = 0.0;
        double upstream = 0.0;
        double discrepancy = 0.0;
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
            const MethodOutcome& outcome = report.outcomes[m * cfg.seeds.size() + s];
            downstream += outcome.downstream_acc;
            upstream += outcome.upstream_acc;
            discrepancy += outcome.final_discrepancy;
        }
        const double n = static_cast<double>(cfg.seeds.size());
        per_method[to_string(cfg.methods[m])] = {{"mean_downstream_acc", downstream / n},
                                                 {"mean_upstream_acc", upstream / n},
                                                 {"mean_final_discrepancy", discrepancy / n}};
    }
    summary["seeds"] = cfg.seeds;
    summary["methods"] = per_method;
    return summary;
}

json run_rollback(const CliConfig& cfg, const fs::path& dir) {
    json summary;
    const Checkpoint pre = obtain_pretrained(cfg, dir, summary);
    Checkpoint tuned;
    if (!cfg.finetuned_checkpoint.empty()) {
        summary["finetuned_checkpoint"] = cfg.finetuned_checkpoint;
        tuned = load_checkpoint(cfg.finetuned_checkpoint);
    } else {
        const TrainResult result = finetune(cfg.run, pre);
        write_metrics_csv((dir / "finetune_metrics.csv").string(), result.metrics);
        save_checkpoint((dir / "finetuned.ckpt").string(), result.checkpoint);
        tuned = result.checkpoint;
    }
    const std::vector<RollbackRow> rows =
        zero_shot_rollback(cfg.run, tuned, pre, cfg.rollback_steps);
    write_rollback_csv((dir / "rollback.csv").string(), rows);
    summary["steps"] = cfg.rollback_steps;
    summary["finetuned_upstream_acc"] = rows.front().upstream_acc;
    summary["restored_upstream_acc"] = rows.back().upstream_acc;
    summary["finetuned_discrepancy"] = rows.front().discrepancy;
    return summary;
}

json run_sweep(const CliConfig& cfg, const fs::path& dir, int jobs) {
    json summary;
    const Checkpoint pre = obtain_pretrained(cfg, dir, summary);
    const SweepResult result = sweep(cfg.run, pre, cfg.sweep_iota1, cfg.sweep_gamma, jobs);
    write_sweep_csv((dir / "sweep.csv").string(), result);
    const SweepCell& best = result.cells[result.best_index];
    summary["cells"] = result.cells.size();
    summary["best"] = {{"iota1", best.iota1},
                       {"gamma", best.gamma},
                       {"downstream_acc", best.downstream_acc},
                       {"upstream_acc", best.upstream_acc}};
    return summary;
}

std::vector<double> linspace(double lo, double hi, int count) {
    std::vector<double> values(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        values[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (count - 1);
    }
    return values;
}

json run_delay_defect(const CliConfig& cfg, const fs::path& dir) {
    const std::vector<double> thetas =
        cfg.delay_theta.empty() ? linspace(-2.0, 2.0, 41) : cfg.delay_theta;
    const std::vector<double> eta_grads =
        cfg.delay_eta_grad.empty() ? linspace(-1.5, 1.5, 41) : cfg.delay_eta_grad;
    const std::vector<double> lambdas =
        cfg.delay_lambda.empty() ? linspace(0.0, 1.0, 21) : cfg.delay_lambda;

    const DelayDefectResult result = delay_defect_scan(thetas, eta_grads, lambdas);
    write_delay_defect_csv((dir / "delay_defect.csv").string(), result);
    if (result.disagreements != 0) {
        throw NumericError("delay-defect: direct and closed-form predicates disagree on " +
                           std::to_string(result.disagreements) + " cells");
    }
    std::int64_t defects = 0;
    for (const DelayDefectCell& cell : result.cells) {
        if (cell.defect_direct) defects += 1;
    }
    json summary;
    summary["cells"] = result.cells.size();
    summary["defect_cells"] = defects;
    summary["disagreements"] = result.disagreements;
    return summary;
}

json run_grad_check(const CliConfig& cfg, const fs::path& dir) {
    std::vector<std::pair<std::string, MlpSpec>> specs = shipped_model_specs();
    specs.emplace_back("configured", cfg.run.model);

    std::ofstream out(dir / "grad_check.csv", std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("grad-check: cannot open '" + (dir / "grad_check.csv").string() +
                      "' for writing");
    }
    out << "spec,draw,max_rel_error\n";

    double worst = 0.0;
    std::string worst_spec;
    for (const auto& [name, spec] : specs) {
        for (int draw = 0; draw < cfg.grad_check_draws; ++draw) {
            std::mt19937_64 gen(cfg.run.seed + 0x9E3779B97F4A7C15ull *
                                                   static_cast<std::uint64_t>(draw + 1));
            const ModelParams model = build_model(spec, gen());

            const int inputs = spec.layer_sizes.front();
            const int outputs = spec.layer_sizes.back();
            const int batch = 8;
            Batch data;
            data.inputs.resize(inputs, batch);
            for (int c = 0; c < batch; ++c) {
                for (int r = 0; r < inputs; ++r) {
                    data.inputs(r, c) = rng::normal(gen);
                }
            }
            data.labels.resize(batch);
            data.targets.resize(outputs, batch);
            for (int c = 0; c < batch; ++c) {
                data.labels[c] = static_cast<int>(
                    rng::below(gen, static_cast<std::uint64_t>(outputs)));
                for (int r = 0; r < outputs; ++r) {
                    data.targets(r, c) = rng::normal(gen);
                }
            }

            const double error = grad_check(spec, model, data, cfg.grad_check_epsilon);
            out << name << ',' << draw << ',' << format_double(error) << '\n';
            if (error > worst) {
                worst = error;
                worst_spec = name;
            }
        }
    }
    out.flush();
    if (!out) {
        throw IoError("grad-check: write failed");
    }

    json summary;
    summary["specs"] = specs.size();
    summary["draws_per_spec"] = cfg.grad_check_draws;
    summary["max_rel_error"] = worst;
    summary["tolerance"] = kGradCheckTolerance;
    if (worst >= kGradCheckTolerance) {
        throw NumericError("grad-check: max relative error " + format_double(worst) +
                           " on spec '" + worst_spec + "' exceeds " +
                           format_double(kGradCheckTolerance));
    }
    return summary;
}

/// Seeded output locations: a single seed runs in --out itself, several
/// seeds run in per-seed subdirectories.
std::vector<std::pair<std::uint64_t, fs::path>> seed_runs(const CommonArgs& args,
                                                          const CliConfig& cfg) {
    const fs::path base(args.out_dir);
    if (args.seeds.size() <= 1) {
        return {{args.seeds.empty() ? cfg.run.seed : args.seeds.front(), base}};
    }
    std::vector<std::pair<std::uint64_t, fs::path>> runs;
    runs.reserve(args.seeds.size());
    for (std::uint64_t seed : args.seeds) {
        runs.emplace_back(seed, base / ("seed_" + std::to_string(seed)));
    }
    return runs;
}

int dispatch(const std::string& name, const CommonArgs& args) {
    CliConfig cfg = assemble_config(args);

    if (name == "forgetting-test" && !args.seeds.empty()) {
        cfg.seeds = args.seeds;  // --seed overrides the paired-seed list
    }
    validate(cfg);

    prepare_out_dir(args.out_dir, args.overwrite);

    // forgetting-test and delay-defect run once whatever --seed says: the
    // former consumes the whole list, the latter is seed-free.
    std::vector<std::pair<std::uint64_t, fs::path>> runs;
    if (name == "forgetting-test" || name == "delay-defect") {
        runs = {{cfg.run.seed, fs::path(args.out_dir)}};
    } else {
        runs = seed_runs(args, cfg);
    }

    for (const auto& [seed, dir] : runs) {
        cfg.run.seed = seed;
        validate(cfg);
        prepare_out_dir(dir, args.overwrite);

        const auto started = std::chrono::steady_clock::now();
        write_text(dir / "config_echo.txt", render_config(cfg));
        if (cfg.dump_datasets) {
            dump_dataset_csvs(cfg, dir);
        }

        json summary;
        if (name == "pretrain") {
            summary = run_pretrain(cfg, dir);
        } else if (name == "finetune") {
            summary = run_finetune(cfg, dir);
        } else if (name == "forgetting-test") {
            summary = run_forgetting(cfg, dir, args.jobs);
        } else if (name == "rollback") {
            summary = run_rollback(cfg, dir);
        } else if (name == "sweep") {
            summary = run_sweep(cfg, dir, args.jobs);
        } else if (name == "delay-defect") {
            summary = run_delay_defect(cfg, dir);
        } else {
            summary = run_grad_check(cfg, dir);
        }

        const std::chrono::duration<double> elapsed =
            std::chrono::steady_clock::now() - started;
        summary["subcommand"] = name;
        summary["seed"] = seed;
        summary["wall_time_seconds"] = elapsed.count();
        write_text(dir / "summary.json", summary.dump(2) + "\n");
    }
    return 0;
}

}  // namespace
}  // namespace olor

int main(int argc, char** argv) {
    CLI::App app{"Weight-rollback fine-tuning workbench: synthetic tasks, rollback-aware "
                 "optimizers and the experiment protocols around them"};
    app.require_subcommand(1);

    olor::CommonArgs args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"pretrain", "train a fresh model on the upstream task and save the reference"},
        {"finetune", "fine-tune from a pre-trained reference with the configured method"},
        {"forgetting-test", "paired method x seed comparison of forgetting metrics"},
        {"rollback", "zero-shot interpolation from fine-tuned back to pre-trained weights"},
        {"sweep", "fine-tune once per (iota1, gamma) grid cell"},
        {"delay-defect", "scan the coupled weight-decay defect region"},
        {"grad-check", "compare backprop gradients against finite differences"},
    };
    for (const auto& [name, description] : commands) {
        olor::add_common_options(app.add_subcommand(name, description), args);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        return olor::dispatch(app.get_subcommands().front()->get_name(), args);
    } catch (const olor::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return olor::exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
