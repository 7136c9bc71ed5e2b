// Acceptance suite: checks the library's core guarantees end to end and
// prints one [PASS]/[FAIL] line per criterion.  argv[1] is the path to the
// command-line binary, exercised by the byte-determinism criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olor/config.hpp"
#include "olor/csv.hpp"
#include "olor/errors.hpp"
#include "olor/harness.hpp"
#include "olor/rng.hpp"

namespace fs = std::filesystem;
using namespace olor;

namespace {

std::string fmt(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6g", value);
    return buffer;
}

Eigen::VectorXd random_vector(std::mt19937_64& gen, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng::normal(gen);
    return v;
}

/// Single flat layer with a frozen reference equal to its initial values.
ModelParams make_layer_model(std::mt19937_64& gen, int dim) {
    ModelParams model;
    LayerParams layer;
    layer.layer_index = 0;
    layer.name = "layer0";
    layer.values = random_vector(gen, dim);
    model.layers.push_back(std::move(layer));
    model.depth_norm = 1;
    snapshot_as_pretrained(model);
    return model;
}

bool bits_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) ==
               0;
}

// ---------------------------------------------------------------------------
// 1. The maintained discrepancy vector tracks theta - theta_0.
// ---------------------------------------------------------------------------
bool criterion_discrepancy_identity(std::string& detail) {
    std::mt19937_64 gen(0x0101010101010101ull);
    const HyperParams hyper;
    double worst = 0.0;
    for (int trajectory = 0; trajectory < 1000; ++trajectory) {
        const bool adam = trajectory % 2 == 1;
        const int dim = 1 + static_cast<int>(rng::below(gen, 64));
        const int steps = 1 + static_cast<int>(rng::below(gen, 200));
        ModelParams model = make_layer_model(gen, dim);
        OptimizerState state = make_state(model, adam);
        for (int t = 1; t <= steps; ++t) {
            const Eigen::VectorXd grad = random_vector(gen, dim);
            const double lr = rng::uniform(gen, 1e-4, 0.2);
            const double rho = rng::uniform(gen, 0.0, 0.999);
            const double lambda = rho / lr;
            if (adam) {
                olor_adam_step(state.layers[0], model.layers[0], grad, lr, hyper, t, lambda);
            } else {
                olor_sgd_step(state.layers[0], model.layers[0], grad, lr, hyper.momentum,
                              lambda);
            }
        }
        worst = std::max(worst, audit_discrepancy(state, model));
    }
    detail = "max rel err " + fmt(worst) + " over 1000 trajectories";
    return worst <= 1e-10;
}

// ---------------------------------------------------------------------------
// 2. A zero rollback penalty reduces bit-for-bit to the host optimizer.
// ---------------------------------------------------------------------------
bool criterion_reduction(std::string& detail) {
    std::mt19937_64 gen(0x0202020202020202ull);
    const HyperParams hyper;
    for (int trajectory = 0; trajectory < 100; ++trajectory) {
        const bool adam = trajectory % 2 == 1;
        const int dim = 1 + static_cast<int>(rng::below(gen, 32));
        const int steps = 1 + static_cast<int>(rng::below(gen, 100));
        ModelParams host_model = make_layer_model(gen, dim);
        ModelParams olor_model = host_model;
        OptimizerState host_state = make_state(host_model, adam);
        OptimizerState olor_state = make_state(olor_model, adam);
        for (int t = 1; t <= steps; ++t) {
            const Eigen::VectorXd grad = random_vector(gen, dim);
            const double lr = rng::uniform(gen, 1e-4, 0.2);
            if (adam) {
                adam_step(host_state.layers[0], host_model.layers[0], grad, lr, hyper, t);
                olor_adam_step(olor_state.layers[0], olor_model.layers[0], grad, lr, hyper, t,
                               0.0);
            } else {
                sgd_momentum_step(host_state.layers[0], host_model.layers[0], grad, lr,
                                  hyper.momentum);
                olor_sgd_step(olor_state.layers[0], olor_model.layers[0], grad, lr,
                              hyper.momentum, 0.0);
            }
            if (!bits_equal(host_model.layers[0].values, olor_model.layers[0].values) ||
                !bits_equal(host_state.layers[0].m, olor_state.layers[0].m) ||
                (adam && !bits_equal(host_state.layers[0].v, olor_state.layers[0].v))) {
                detail = "trajectory " + std::to_string(trajectory) + " diverged at step " +
                         std::to_string(t);
                return false;
            }
        }
    }
    detail = "100 trajectories bit-identical";
    return true;
}

// ---------------------------------------------------------------------------
// 3. One memoryless rollback step equals its closed form
//    (1 - rho) * (theta - lr * g) + rho * theta_0.
// ---------------------------------------------------------------------------
bool criterion_closed_form(std::string& detail) {
    std::mt19937_64 gen(0x0303030303030303ull);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double theta = rng::uniform(gen, -2.0, 2.0);
        const double theta0 = rng::uniform(gen, -2.0, 2.0);
        const double g = rng::uniform(gen, -5.0, 5.0);
        const double lr = rng::uniform(gen, 1e-4, 1.0);
        const double rho_drawn = rng::uniform01(gen);
        const double lambda = rho_drawn / lr;

        ModelParams model;
        LayerParams layer;
        layer.layer_index = 0;
        layer.name = "layer0";
        layer.values = Eigen::VectorXd::Constant(1, theta);
        layer.pretrained = Eigen::VectorXd::Constant(1, theta0);
        model.layers.push_back(std::move(layer));
        OptimizerState state = make_state(model, false);
        state.layers[0].d[0] = theta - theta0;

        const Eigen::VectorXd grad = Eigen::VectorXd::Constant(1, g);
        olor_sgd_step(state.layers[0], model.layers[0], grad, lr, /*beta=*/0.0, lambda);

        const double rho = lr * lambda;  // the coefficient the step applies
        const double expected = (1.0 - rho) * (theta - lr * g) + rho * theta0;
        const double actual = model.layers[0].values[0];
        const double rel = std::abs(actual - expected) / std::max(std::abs(expected), 1.0);
        worst = std::max(worst, rel);
    }
    detail = "max rel err " + fmt(worst) + " over 10000 scalar steps";
    return worst <= 1e-12;
}

// ---------------------------------------------------------------------------
// 4. A rollback fraction of exactly one freezes theta at theta_0.
// ---------------------------------------------------------------------------
bool criterion_full_rollback(std::string& detail) {
    std::mt19937_64 gen(0x0404040404040404ull);
    const HyperParams hyper;
    const double lr = 0.5;
    const double lambda = 2.0;  // rho = 0.5 * 2 = 1 exactly
    for (int trajectory = 0; trajectory < 40; ++trajectory) {
        const bool adam = trajectory % 2 == 1;
        const int dim = 1 + static_cast<int>(rng::below(gen, 16));
        ModelParams model = make_layer_model(gen, dim);
        const Eigen::VectorXd reference = *model.layers[0].pretrained;
        OptimizerState state = make_state(model, adam);
        for (int t = 1; t <= 30; ++t) {
            const Eigen::VectorXd grad = random_vector(gen, dim);
            if (adam) {
                olor_adam_step(state.layers[0], model.layers[0], grad, lr, hyper, t, lambda);
            } else {
                olor_sgd_step(state.layers[0], model.layers[0], grad, lr, hyper.momentum,
                              lambda);
            }
            if (!bits_equal(model.layers[0].values, reference)) {
                detail = "theta left theta_0 at step " + std::to_string(t);
                return false;
            }
            for (int j = 0; j < dim; ++j) {
                if (state.layers[0].d[j] != 0.0) {
                    detail = "d nonzero at step " + std::to_string(t);
                    return false;
                }
            }
        }
    }
    detail = "theta == theta_0 and d == 0 for both variants over 40 trajectories";
    return true;
}

// ---------------------------------------------------------------------------
// 5. Penalty schedule: exact endpoints, depth monotonicity, gamma ordering.
// ---------------------------------------------------------------------------
bool criterion_penalty(std::string& detail) {
    std::mt19937_64 gen(0x0505050505050505ull);
    for (int i = 0; i < 10000; ++i) {
        PenaltyConfig cfg;
        cfg.depth_norm = 2 + static_cast<int>(rng::below(gen, 11));
        cfg.gamma = rng::uniform(gen, 0.5, 6.0);
        cfg.iota2 = rng::uniform(gen, 0.0, 0.5);
        cfg.iota1 = cfg.iota2 + rng::uniform(gen, 1e-4, 0.5);
        cfg.base_lr = 1.0;

        if (raw_penalty(cfg, 0) != cfg.iota1) {
            detail = "raw(0) != iota1 at config " + std::to_string(i);
            return false;
        }
        if (raw_penalty(cfg, cfg.depth_norm) != cfg.iota2) {
            detail = "raw(n) != iota2 at config " + std::to_string(i);
            return false;
        }
        double previous = raw_penalty(cfg, 0);
        for (int depth = 1; depth <= cfg.depth_norm; ++depth) {
            const double current = raw_penalty(cfg, depth);
            if (current > previous) {
                detail = "raw increased from depth " + std::to_string(depth - 1) + " at config " +
                         std::to_string(i);
                return false;
            }
            previous = current;
        }

        PenaltyConfig steeper = cfg;
        steeper.gamma = cfg.gamma + rng::uniform(gen, 0.5, 2.0);
        const int interior = 1 + static_cast<int>(rng::below(
                                     gen, static_cast<std::uint64_t>(cfg.depth_norm - 1)));
        if (!(raw_penalty(steeper, interior) < raw_penalty(cfg, interior))) {
            detail = "larger gamma did not strictly reduce raw(" + std::to_string(interior) +
                     ") at config " + std::to_string(i);
            return false;
        }

        PenaltyConfig constant = cfg;
        constant.iota1 = constant.iota2;
        if (raw_penalty(constant, interior) != constant.iota2) {
            detail = "equal levels not constant at config " + std::to_string(i);
            return false;
        }
    }
    detail = "endpoints bitwise, depth monotone, gamma strict over 10000 configs";
    return true;
}

// ---------------------------------------------------------------------------
// 6. Delay-defect predicates agree on the full grid.
// ---------------------------------------------------------------------------
std::vector<double> linspace(double lo, double hi, int count) {
    std::vector<double> values(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        values[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (count - 1);
    }
    return values;
}

bool criterion_delay_defect(std::string& detail) {
    const DelayDefectResult result = delay_defect_scan(
        linspace(-2.0, 2.0, 100), linspace(-1.5, 1.5, 100), linspace(0.0, 1.0, 100));
    std::int64_t defects = 0;
    for (const DelayDefectCell& cell : result.cells) {
        if (cell.defect_direct) defects += 1;
    }
    detail = std::to_string(result.disagreements) + " disagreements, " +
             std::to_string(defects) + " defect cells of " + std::to_string(result.cells.size());
    return result.disagreements == 0 && defects > 0;
}

// ---------------------------------------------------------------------------
// 7. Backprop matches central finite differences on every shipped spec.
// ---------------------------------------------------------------------------
Batch random_batch(std::mt19937_64& gen, const MlpSpec& spec, int batch) {
    const int inputs = spec.layer_sizes.front();
    const int outputs = spec.layer_sizes.back();
    Batch data;
    data.inputs.resize(inputs, batch);
    for (int c = 0; c < batch; ++c) {
        for (int r = 0; r < inputs; ++r) data.inputs(r, c) = rng::normal(gen);
    }
    data.labels.resize(batch);
    data.targets.resize(outputs, batch);
    for (int c = 0; c < batch; ++c) {
        data.labels[c] =
            static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(outputs)));
        for (int r = 0; r < outputs; ++r) data.targets(r, c) = rng::normal(gen);
    }
    return data;
}

bool criterion_grad_check(std::string& detail) {
    double worst = 0.0;
    std::string worst_spec;
    for (const auto& [name, spec] : shipped_model_specs()) {
        for (int draw = 0; draw < 20; ++draw) {
            std::mt19937_64 gen(0x0707070707070707ull ^
                                (std::hash<std::string>{}(name) + static_cast<std::uint64_t>(draw)));
            const ModelParams model = build_model(spec, gen());
            const Batch batch = random_batch(gen, spec, 8);
            const double error = grad_check(spec, model, batch, 1e-5);
            if (error > worst) {
                worst = error;
                worst_spec = name;
            }
        }
    }
    detail = "max rel err " + fmt(worst) + " (spec " + worst_spec + ", 20 draws each)";
    return worst < 1e-4;
}

// ---------------------------------------------------------------------------
// 8. Forgetting protocol: rollback fine-tuning stays closer to the reference
//    and retains at least as much upstream accuracy at comparable downstream
//    accuracy, over five paired seeds.  The measured means are frozen as
//    regression values.
// ---------------------------------------------------------------------------
struct ForgettingMeans {
    double downstream = 0.0;
    double upstream = 0.0;
    double discrepancy = 0.0;
};

constexpr double kFrozenFullDownstream = 1.0;
constexpr double kFrozenFullUpstream = 1.0;
constexpr double kFrozenFullDiscrepancy = 2.5454133758442827;
constexpr double kFrozenOlorDownstream = 1.0;
constexpr double kFrozenOlorUpstream = 1.0;
constexpr double kFrozenOlorDiscrepancy = 1.9900881358136076;
constexpr double kFrozenTolerance = 1e-9;

bool criterion_forgetting(std::string& detail) {
    RunConfig cfg = default_config().run;
    cfg.penalty.iota1 = 0.01;
    cfg.penalty.iota2 = 0.0;
    cfg.penalty.gamma = 1.0;
    const std::vector<Method> methods = {Method::full, Method::olor_adam};
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    const ForgettingReport report = forgetting_test(cfg, methods, seeds, 4);

    ForgettingMeans means[2];
    for (std::size_t m = 0; m < methods.size(); ++m) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const MethodOutcome& outcome = report.outcomes[m * seeds.size() + s];
            means[m].downstream += outcome.downstream_acc;
            means[m].upstream += outcome.upstream_acc;
            means[m].discrepancy += outcome.final_discrepancy;
        }
        means[m].downstream /= static_cast<double>(seeds.size());
        means[m].upstream /= static_cast<double>(seeds.size());
        means[m].discrepancy /= static_cast<double>(seeds.size());
    }
    const ForgettingMeans& full = means[0];
    const ForgettingMeans& olor = means[1];

    detail = "full(down " + fmt(full.downstream) + ", up " + fmt(full.upstream) + ", disc " +
             fmt(full.discrepancy) + ") vs olor(down " + fmt(olor.downstream) + ", up " +
             fmt(olor.upstream) + ", disc " + fmt(olor.discrepancy) + ")";

    const bool directional = olor.discrepancy < full.discrepancy &&
                             olor.upstream >= full.upstream &&
                             olor.downstream >= full.downstream - 0.01;
    const bool frozen =
        std::abs(full.downstream - kFrozenFullDownstream) <= kFrozenTolerance &&
        std::abs(full.upstream - kFrozenFullUpstream) <= kFrozenTolerance &&
        std::abs(full.discrepancy - kFrozenFullDiscrepancy) <= kFrozenTolerance &&
        std::abs(olor.downstream - kFrozenOlorDownstream) <= kFrozenTolerance &&
        std::abs(olor.upstream - kFrozenOlorUpstream) <= kFrozenTolerance &&
        std::abs(olor.discrepancy - kFrozenOlorDiscrepancy) <= kFrozenTolerance;
    if (!frozen) detail += " [regression values drifted]";
    return directional && frozen;
}

// ---------------------------------------------------------------------------
// 9. Zero-shot rollback interpolates the discrepancy exactly linearly.
// ---------------------------------------------------------------------------
bool criterion_rollback(std::string& detail) {
    RunConfig cfg = default_config().run;
    const TrainResult pre = pretrain(cfg);
    cfg.method = Method::full;
    const TrainResult tuned = finetune(cfg, pre.checkpoint);

    const int steps = 50;
    const std::vector<RollbackRow> rows =
        zero_shot_rollback(cfg, tuned.checkpoint, pre.checkpoint, steps);
    const double start = rows.front().discrepancy;
    if (!(start > 0.0)) {
        detail = "fine-tuned discrepancy is zero; nothing to roll back";
        return false;
    }
    double worst = 0.0;
    for (int k = 0; k <= steps; ++k) {
        const double expected = (1.0 - static_cast<double>(k) / steps) * start;
        worst = std::max(worst,
                         std::abs(rows[static_cast<std::size_t>(k)].discrepancy - expected));
    }
    const bool linear = worst <= 1e-12 * start;
    const bool endpoint_zero = rows.back().discrepancy == 0.0;
    const bool endpoint_acc = rows.back().upstream_acc == pre.metrics.back().upstream_acc;
    detail = "max deviation " + fmt(worst) + " of start " + fmt(start) + ", restored acc " +
             fmt(rows.back().upstream_acc);
    if (!endpoint_zero) detail += " [k=K discrepancy nonzero]";
    if (!endpoint_acc) detail += " [k=K accuracy differs from pretrain]";
    return linear && endpoint_zero && endpoint_acc;
}

// ---------------------------------------------------------------------------
// 10. CLI reruns are byte-identical.
// ---------------------------------------------------------------------------
bool run_command(const std::string& command) {
    return std::system((command + " >/dev/null 2>&1").c_str()) == 0;
}

bool files_identical(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary);
    std::ifstream fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return !ca.empty() && ca == cb;
}

bool criterion_cli_determinism(const std::string& cli, std::string& detail) {
    if (cli.empty()) {
        detail = "no CLI binary path given (argv[1])";
        return false;
    }
    const fs::path root =
        fs::temp_directory_path() /
        ("olor_acceptance_" +
         std::to_string(
             std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(root);

    const fs::path config = root / "run.cfg";
    std::ofstream(config) << "pretrain_epochs = 12\nepochs = 6\n";
    const fs::path sweep_config = root / "sweep.cfg";
    std::ofstream(sweep_config) << "pretrain_epochs = 12\nepochs = 6\nmethod = olor-adam\n"
                                << "sweep.iota1 = 0, 0.01\nsweep.gamma = 1, 2\n";

    struct Job {
        std::string name;
        std::string args;
        std::vector<std::string> outputs;
    };
    const std::vector<Job> jobs = {
        {"finetune", " finetune --config " + config.string(),
         {"pretrain_metrics.csv", "finetune_metrics.csv", "config_echo.txt", "pretrained.ckpt",
          "finetuned.ckpt"}},
        {"delay-defect", " delay-defect", {"delay_defect.csv", "config_echo.txt"}},
        {"sweep", " sweep --config " + sweep_config.string(),
         {"sweep.csv", "pretrain_metrics.csv", "config_echo.txt"}},
    };

    bool ok = true;
    std::string failure;
    for (const Job& job : jobs) {
        const fs::path first = root / (job.name + "_a");
        const fs::path second = root / (job.name + "_b");
        if (!run_command(cli + job.args + " --out " + first.string()) ||
            !run_command(cli + job.args + " --out " + second.string())) {
            failure = job.name + " run failed";
            ok = false;
            break;
        }
        for (const std::string& output : job.outputs) {
            if (!files_identical(first / output, second / output)) {
                failure = job.name + "/" + output + " differs between reruns";
                ok = false;
                break;
            }
        }
        if (!ok) break;
    }
    fs::remove_all(root);
    detail = ok ? "finetune, delay-defect and sweep reruns byte-identical" : failure;
    return ok;
}

// ---------------------------------------------------------------------------
// 11. The sweep grid completes and its zero-penalty cells equal the plain
//     baseline bit for bit.
// ---------------------------------------------------------------------------
bool criterion_sweep(std::string& detail) {
    const CliConfig defaults = default_config();
    RunConfig cfg = defaults.run;
    cfg.method = Method::olor_adam;
    const TrainResult pre = pretrain(cfg);
    const SweepResult result =
        sweep(cfg, pre.checkpoint, defaults.sweep_iota1, defaults.sweep_gamma, 4);

    RunConfig full_cfg = cfg;
    full_cfg.method = Method::full;
    const MetricsRecord baseline = finetune(full_cfg, pre.checkpoint).metrics.back();

    const std::size_t expected_cells = defaults.sweep_iota1.size() * defaults.sweep_gamma.size();
    if (result.cells.size() != expected_cells) {
        detail = "expected " + std::to_string(expected_cells) + " cells, got " +
                 std::to_string(result.cells.size());
        return false;
    }
    int zero_cells = 0;
    for (const SweepCell& cell : result.cells) {
        if (cell.iota1 != 0.0) continue;
        zero_cells += 1;
        if (cell.downstream_acc != baseline.downstream_acc ||
            cell.upstream_acc != baseline.upstream_acc ||
            cell.final_discrepancy != baseline.discrepancy) {
            detail = "zero-penalty cell (gamma " + fmt(cell.gamma) +
                     ") differs from the plain baseline";
            return false;
        }
    }
    detail = std::to_string(result.cells.size()) + " cells, " + std::to_string(zero_cells) +
             " zero-penalty cells bit-equal to the baseline, best iota1 " +
             fmt(result.cells[result.best_index].iota1);
    return zero_cells == static_cast<int>(defaults.sweep_gamma.size());
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";

    struct Entry {
        int id;
        const char* name;
        bool passed;
        std::string detail;
        double seconds;
    };
    std::vector<Entry> entries;

    const auto run = [&](int id, const char* name, auto&& fn) {
        const auto started = std::chrono::steady_clock::now();
        std::string detail;
        bool passed = false;
        try {
            passed = fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const std::chrono::duration<double> elapsed =
            std::chrono::steady_clock::now() - started;
        entries.push_back({id, name, passed, detail, elapsed.count()});
    };

    run(1, "discrepancy identity", criterion_discrepancy_identity);
    run(2, "zero-penalty reduction", criterion_reduction);
    run(3, "single-step closed form", criterion_closed_form);
    run(4, "full-rollback freeze", criterion_full_rollback);
    run(5, "penalty schedule shape", criterion_penalty);
    run(6, "delay-defect agreement", criterion_delay_defect);
    run(7, "gradient correctness", criterion_grad_check);
    run(8, "forgetting protocol", criterion_forgetting);
    run(9, "zero-shot rollback", criterion_rollback);
    run(10, "CLI byte determinism",
        [&](std::string& detail) { return criterion_cli_determinism(cli, detail); });
    run(11, "sweep protocol", criterion_sweep);

    int failures = 0;
    for (const Entry& entry : entries) {
        if (!entry.passed) failures += 1;
        std::printf("[%s] %2d. %s: %s (%.2fs)\n", entry.passed ? "PASS" : "FAIL", entry.id,
                    entry.name, entry.detail.c_str(), entry.seconds);
    }
    std::printf("%d/%d criteria passed\n", static_cast<int>(entries.size()) - failures,
                static_cast<int>(entries.size()));
    return failures > 0 ? 1 : 0;
}
