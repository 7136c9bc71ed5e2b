#include "olor/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "olor/csv.hpp"
#include "olor/errors.hpp"
#include "olor/rng.hpp"

namespace olor {

namespace {

// Stream salts keep dataset generation, model init, head re-init and batch
// shuffling on independent pinned streams, so changing the training method
// never shifts any other random draw.
constexpr std::uint64_t kPretrainShuffleSalt = 0xA5A5A5A500000001ull;
constexpr std::uint64_t kFinetuneShuffleSalt = 0xA5A5A5A500000002ull;
constexpr std::uint64_t kHeadInitSalt = 0xA5A5A5A500000003ull;

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread& worker : pool) worker.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void validate(const RunConfig& cfg) {
    validate(cfg.upstream);
    validate(cfg.downstream);
    validate(cfg.model);
    validate(cfg.hyper);
    if (!(cfg.penalty.iota2 >= 0.0)) {
        throw ConfigError("config: penalty.iota2 must satisfy iota2 >= 0, got " +
                          std::to_string(cfg.penalty.iota2));
    }
    if (!(cfg.penalty.iota1 >= cfg.penalty.iota2)) {
        throw ConfigError("config: constraint iota1 >= iota2 violated (iota1=" +
                          std::to_string(cfg.penalty.iota1) + ", iota2=" +
                          std::to_string(cfg.penalty.iota2) + ")");
    }
    if (!(cfg.penalty.iota1 <= 1.0)) {
        throw ConfigError("config: penalty.iota1 must satisfy iota1 <= 1, got " +
                          std::to_string(cfg.penalty.iota1));
    }
    if (!(cfg.penalty.gamma > 0.0) || !std::isfinite(cfg.penalty.gamma)) {
        throw ConfigError("config: penalty.gamma must be positive and finite, got " +
                          std::to_string(cfg.penalty.gamma));
    }
    if (cfg.epochs < 0) {
        throw ConfigError("config: epochs must be >= 0, got " + std::to_string(cfg.epochs));
    }
    if (cfg.pretrain_epochs < 0) {
        throw ConfigError("config: pretrain_epochs must be >= 0, got " +
                          std::to_string(cfg.pretrain_epochs));
    }
    if (cfg.batch_size < 1) {
        throw ConfigError("config: batch_size must be >= 1, got " +
                          std::to_string(cfg.batch_size));
    }
    if (cfg.model.layer_sizes.front() != cfg.upstream.dim) {
        throw ConfigError("config: model input size " +
                          std::to_string(cfg.model.layer_sizes.front()) +
                          " != upstream feature dim " + std::to_string(cfg.upstream.dim));
    }
    if (cfg.model.layer_sizes.back() != cfg.upstream.num_classes) {
        throw ConfigError("config: model output size " +
                          std::to_string(cfg.model.layer_sizes.back()) +
                          " != upstream class count " + std::to_string(cfg.upstream.num_classes));
    }
    if (cfg.downstream.dim != cfg.upstream.dim) {
        throw ConfigError("config: downstream feature dim " + std::to_string(cfg.downstream.dim) +
                          " != upstream feature dim " + std::to_string(cfg.upstream.dim));
    }
    if (!(cfg.schedule.floor_lr >= 0.0 && cfg.schedule.floor_lr <= cfg.hyper.base_lr)) {
        throw ConfigError("config: schedule.floor_lr must lie in [0, hyper.lr], got " +
                          std::to_string(cfg.schedule.floor_lr));
    }
}

MlpSpec downstream_spec(const RunConfig& cfg) {
    MlpSpec spec = cfg.model;
    spec.layer_sizes.back() = cfg.downstream.num_classes;
    return spec;
}

// ---------------------------------------------------------------------------
// Metrics CSV.
// ---------------------------------------------------------------------------

std::string metrics_csv_header(int weight_layers) {
    std::ostringstream header;
    header << "step,epoch,train_loss,downstream_acc,upstream_acc,discrepancy";
    for (int k = 0; k < weight_layers; ++k) header << ",disc_layer_" << k;
    for (int k = 0; k < weight_layers; ++k) header << ",rho_layer_" << k;
    return header.str();
}

void write_metrics_csv(const std::string& path, const MetricsLog& log) {
    if (log.empty()) {
        throw ConfigError("metrics: refusing to write an empty log");
    }
    const std::size_t layers = log.front().layer_discrepancy.size();
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("metrics: cannot open '" + path + "' for writing");
    }
    out << metrics_csv_header(static_cast<int>(layers)) << '\n';
    for (const MetricsRecord& rec : log) {
        if (rec.layer_discrepancy.size() != layers || rec.effective_rho.size() != layers) {
            throw ConfigError("metrics: inconsistent per-layer column counts");
        }
        out << rec.step << ',' << rec.epoch << ',' << format_double(rec.train_loss) << ','
            << format_double(rec.downstream_acc) << ',' << format_double(rec.upstream_acc) << ','
            << format_double(rec.discrepancy);
        for (double v : rec.layer_discrepancy) out << ',' << format_double(v);
        for (double v : rec.effective_rho) out << ',' << format_double(v);
        out << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("metrics: write to '" + path + "' failed");
    }
}

// ---------------------------------------------------------------------------
// Training loop internals.
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd one_hot(const Eigen::VectorXi& labels, int num_outputs) {
    Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(num_outputs, labels.size());
    for (Eigen::Index b = 0; b < labels.size(); ++b) {
        targets(labels[b], b) = 1.0;
    }
    return targets;
}

Batch gather_batch(const MlpSpec& spec, const Eigen::MatrixXd& inputs,
                   const Eigen::VectorXi& labels, const std::vector<int>& order,
                   Eigen::Index start, Eigen::Index count) {
    Batch batch;
    batch.inputs.resize(inputs.rows(), count);
    batch.labels.resize(count);
    for (Eigen::Index b = 0; b < count; ++b) {
        const int src = order[static_cast<std::size_t>(start + b)];
        batch.inputs.col(b) = inputs.col(src);
        batch.labels[b] = labels[src];
    }
    if (spec.loss == Loss::mse) {
        batch.targets = one_hot(batch.labels, spec.layer_sizes.back());
    }
    return batch;
}

Batch whole_split(const MlpSpec& spec, const Eigen::MatrixXd& inputs,
                  const Eigen::VectorXi& labels) {
    Batch batch;
    batch.inputs = inputs;
    batch.labels = labels;
    if (spec.loss == Loss::mse) {
        batch.targets = one_hot(batch.labels, spec.layer_sizes.back());
    }
    return batch;
}

struct EvalContext {
    const MlpSpec* trained_spec = nullptr;     // spec whose head matches the trained task
    const Dataset* trained_data = nullptr;
    const MlpSpec* upstream_spec = nullptr;
    const Dataset* upstream_data = nullptr;
    const LayerParams* upstream_head = nullptr;  // null when the model head is the upstream head
};

double upstream_retention_acc(const ModelParams& model, const EvalContext& ctx) {
    if (!ctx.upstream_head) {
        const Eigen::MatrixXd logits =
            forward(*ctx.upstream_spec, model, ctx.upstream_data->valid_inputs);
        return accuracy(logits, ctx.upstream_data->valid_labels);
    }
    ModelParams grafted = model;
    grafted.layers.back() = *ctx.upstream_head;
    const Eigen::MatrixXd logits =
        forward(*ctx.upstream_spec, grafted, ctx.upstream_data->valid_inputs);
    return accuracy(logits, ctx.upstream_data->valid_labels);
}

MetricsRecord eval_record(std::int64_t step, int epoch, double train_loss, double lr_for_rho,
                          const ModelParams& model, const ModelOptimizer& opt,
                          const EvalContext& ctx) {
    MetricsRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.train_loss = train_loss;

    const Eigen::MatrixXd logits =
        forward(*ctx.trained_spec, model, ctx.trained_data->valid_inputs);
    rec.downstream_acc = accuracy(logits, ctx.trained_data->valid_labels);
    rec.upstream_acc = upstream_retention_acc(model, ctx);

    rec.layer_discrepancy = discrepancy_norms_per_layer(model);
    double sum_sq = 0.0;
    for (double norm : rec.layer_discrepancy) sum_sq += norm * norm;
    rec.discrepancy = std::sqrt(sum_sq);

    rec.effective_rho.resize(model.layers.size(), 0.0);
    if (opt.method() == Method::olor_sgd || opt.method() == Method::olor_adam) {
        for (std::size_t k = 0; k < model.layers.size(); ++k) {
            rec.effective_rho[k] = lr_for_rho * opt.stored_lambda(k);
        }
    }
    return rec;
}

/// Runs `epochs` epochs of minibatch training over data's train split,
/// appending one record before training and one at the end of every epoch.
void fit(const RunConfig& cfg, const MlpSpec& spec, ModelParams& model, ModelOptimizer& opt,
         const Dataset& data, int epochs, std::uint64_t shuffle_salt, const EvalContext& ctx,
         MetricsLog& log) {
    const Eigen::Index n_train = data.train_labels.size();
    const Eigen::Index batch = cfg.batch_size;
    const std::int64_t steps_per_epoch = (n_train + batch - 1) / batch;
    const std::int64_t total_steps = std::max<std::int64_t>(1, epochs * steps_per_epoch);

    LrSchedule schedule = cfg.schedule;
    schedule.base_lr = cfg.hyper.base_lr;
    schedule.total_steps = total_steps;
    validate(schedule);

    {
        const Batch whole = whole_split(spec, data.train_inputs, data.train_labels);
        const double loss0 = loss_value(spec, forward(spec, model, whole.inputs), whole);
        log.push_back(eval_record(0, 0, loss0, 0.0, model, opt, ctx));
    }

    std::vector<int> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_gen(cfg.seed ^ shuffle_salt);

    std::int64_t t = 0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        rng::shuffle(order, shuffle_gen);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (Eigen::Index start = 0; start < n_train; start += batch) {
            const Eigen::Index count = std::min<Eigen::Index>(batch, n_train - start);
            const Batch minibatch =
                gather_batch(spec, data.train_inputs, data.train_labels, order, start, count);
            ForwardCache cache;
            forward(spec, model, minibatch.inputs, &cache);
            BackwardResult back = backward(spec, model, cache, minibatch);
            if (!std::isfinite(back.loss)) {
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(t + 1));
            }
            ++t;
            lr = lr_at(schedule, t);
            opt.step(model, std::move(back.grads), lr);
            loss_sum += back.loss;
        }
        log.push_back(eval_record(t, epoch, loss_sum / static_cast<double>(steps_per_epoch), lr,
                                  model, opt, ctx));
    }
}

PenaltyConfig resolved_penalty(const RunConfig& cfg, const ModelParams& model) {
    PenaltyConfig penalty = cfg.penalty;
    penalty.depth_norm = model.depth_norm;
    penalty.base_lr = cfg.hyper.base_lr;
    return penalty;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pre-training and fine-tuning.
// ---------------------------------------------------------------------------

TrainResult pretrain(const RunConfig& cfg) {
    validate(cfg);
    const Dataset upstream = generate(cfg.upstream);
    const MlpSpec spec = cfg.model;

    ModelParams model = build_model(spec, cfg.seed);
    ModelOptimizer opt(Method::full, cfg.base_optimizer, cfg.hyper, resolved_penalty(cfg, model),
                       model);

    EvalContext ctx;
    ctx.trained_spec = &spec;
    ctx.trained_data = &upstream;
    ctx.upstream_spec = &spec;
    ctx.upstream_data = &upstream;

    TrainResult result;
    fit(cfg, spec, model, opt, upstream, cfg.pretrain_epochs, kPretrainShuffleSalt, ctx,
        result.metrics);

    snapshot_as_pretrained(model);
    result.checkpoint.model = std::move(model);
    result.checkpoint.optimizer_state = opt.state();
    result.checkpoint.rng_seed = cfg.seed;
    result.checkpoint.step = opt.state().t;
    return result;
}

TrainResult finetune(const RunConfig& cfg, const Checkpoint& pretrained) {
    validate(cfg);
    validate(pretrained.model);
    for (const LayerParams& layer : pretrained.model.layers) {
        if (!layer.pretrained) {
            throw ConfigError("finetune: checkpoint layer '" + layer.name +
                              "' has no pretrained reference; run pretrain first");
        }
    }

    const MlpSpec up_spec = cfg.model;
    const MlpSpec down_spec = downstream_spec(cfg);
    if (static_cast<int>(pretrained.model.layers.size()) != weight_layer_count(up_spec)) {
        throw ConfigError("finetune: checkpoint has " +
                          std::to_string(pretrained.model.layers.size()) +
                          " layers, model spec expects " +
                          std::to_string(weight_layer_count(up_spec)));
    }

    const Dataset downstream = generate(cfg.downstream);
    const Dataset upstream = generate(cfg.upstream);
    const LayerParams upstream_head = pretrained.model.layers.back();

    ModelParams model = reinit_head(up_spec, pretrained.model, cfg.downstream.num_classes,
                                    cfg.seed ^ kHeadInitSalt);
    ModelOptimizer opt(cfg.method, cfg.base_optimizer, cfg.hyper, resolved_penalty(cfg, model),
                       model);

    EvalContext ctx;
    ctx.trained_spec = &down_spec;
    ctx.trained_data = &downstream;
    ctx.upstream_spec = &up_spec;
    ctx.upstream_data = &upstream;
    ctx.upstream_head = &upstream_head;

    TrainResult result;
    fit(cfg, down_spec, model, opt, downstream, cfg.epochs, kFinetuneShuffleSalt, ctx,
        result.metrics);

    result.checkpoint.model = std::move(model);
    result.checkpoint.optimizer_state = opt.state();
    result.checkpoint.rng_seed = cfg.seed;
    result.checkpoint.step = opt.state().t;
    return result;
}

// ---------------------------------------------------------------------------
// Forgetting protocol.
// ---------------------------------------------------------------------------

ForgettingReport forgetting_test(const RunConfig& cfg, const std::vector<Method>& methods,
                                 const std::vector<std::uint64_t>& seeds, int jobs) {
    validate(cfg);
    if (methods.empty()) {
        throw ConfigError("forgetting test: method list is empty");
    }
    if (seeds.empty()) {
        throw ConfigError("forgetting test: seed list is empty");
    }

    std::vector<Checkpoint> pretrained(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t s) {
        RunConfig per_seed = cfg;
        per_seed.seed = seeds[s];
        pretrained[s] = pretrain(per_seed).checkpoint;
    });

    ForgettingReport report;
    report.outcomes.resize(methods.size() * seeds.size());
    parallel_for(report.outcomes.size(), jobs, [&](std::size_t i) {
        const std::size_t m = i / seeds.size();
        const std::size_t s = i % seeds.size();
        RunConfig per_run = cfg;
        per_run.seed = seeds[s];
        per_run.method = methods[m];
        TrainResult run = finetune(per_run, pretrained[s]);
        MethodOutcome& outcome = report.outcomes[i];
        outcome.method = methods[m];
        outcome.seed = seeds[s];
        outcome.downstream_acc = run.metrics.back().downstream_acc;
        outcome.upstream_acc = run.metrics.back().upstream_acc;
        outcome.final_discrepancy = run.metrics.back().discrepancy;
        outcome.metrics = std::move(run.metrics);
    });
    return report;
}

// ---------------------------------------------------------------------------
// Zero-shot rollback.
// ---------------------------------------------------------------------------

std::vector<RollbackRow> zero_shot_rollback(const RunConfig& cfg, const Checkpoint& finetuned,
                                            const Checkpoint& pretrained, int steps) {
    validate(cfg);
    validate(finetuned.model);
    validate(pretrained.model);
    if (steps < 1) {
        throw ConfigError("rollback: steps must be >= 1, got " + std::to_string(steps));
    }
    if (finetuned.model.layers.size() != pretrained.model.layers.size()) {
        throw ConfigError("rollback: checkpoints disagree on layer count");
    }
    for (std::size_t k = 0; k + 1 < finetuned.model.layers.size(); ++k) {
        const LayerParams& ft = finetuned.model.layers[k];
        const LayerParams& pre = pretrained.model.layers[k];
        if (!ft.pretrained || ft.pretrained->size() != pre.values.size() ||
            !(ft.pretrained->array() == pre.values.array()).all()) {
            throw ConfigError("rollback: fine-tuned layer '" + ft.name +
                              "' does not reference the given pre-trained checkpoint");
        }
    }

    const MlpSpec up_spec = cfg.model;
    const MlpSpec down_spec = downstream_spec(cfg);
    const Dataset upstream = generate(cfg.upstream);
    const Dataset downstream = generate(cfg.downstream);
    const LayerParams& upstream_head = pretrained.model.layers.back();

    std::vector<RollbackRow> rows;
    rows.reserve(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        ModelParams blended = finetuned.model;
        const double keep = static_cast<double>(steps - k) / static_cast<double>(steps);
        if (k > 0) {
            for (LayerParams& layer : blended.layers) {
                if (!layer.pretrained) continue;
                if (k == steps) {
                    layer.values = *layer.pretrained;
                } else {
                    layer.values =
                        *layer.pretrained + keep * (layer.values - *layer.pretrained);
                }
            }
        }

        RollbackRow row;
        row.k = k;
        row.blend = keep;
        {
            ModelParams grafted = blended;
            grafted.layers.back() = upstream_head;
            row.upstream_acc = accuracy(forward(up_spec, grafted, upstream.valid_inputs),
                                        upstream.valid_labels);
        }
        row.downstream_acc = accuracy(forward(down_spec, blended, downstream.valid_inputs),
                                      downstream.valid_labels);
        double sum_sq = 0.0;
        for (double norm : discrepancy_norms_per_layer(blended)) sum_sq += norm * norm;
        row.discrepancy = std::sqrt(sum_sq);
        rows.push_back(row);
    }
    return rows;
}

void write_rollback_csv(const std::string& path, const std::vector<RollbackRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("rollback: cannot open '" + path + "' for writing");
    }
    out << "k,blend,upstream_acc,downstream_acc,discrepancy\n";
    for (const RollbackRow& row : rows) {
        out << row.k << ',' << format_double(row.blend) << ',' << format_double(row.upstream_acc)
            << ',' << format_double(row.downstream_acc) << ',' << format_double(row.discrepancy)
            << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("rollback: write to '" + path + "' failed");
    }
}

// ---------------------------------------------------------------------------
// Hyper-parameter sweep.
// ---------------------------------------------------------------------------

SweepResult sweep(const RunConfig& cfg, const Checkpoint& pretrained,
                  const std::vector<double>& iota1_grid, const std::vector<double>& gamma_grid,
                  int jobs) {
    validate(cfg);
    if (cfg.method != Method::olor_sgd && cfg.method != Method::olor_adam) {
        throw ConfigError("sweep: method must be olor-sgd or olor-adam, got " +
                          std::string(to_string(cfg.method)));
    }
    if (iota1_grid.empty() || gamma_grid.empty()) {
        throw ConfigError("sweep: iota1 and gamma grids must be non-empty");
    }

    SweepResult result;
    result.cells.resize(iota1_grid.size() * gamma_grid.size());
    parallel_for(result.cells.size(), jobs, [&](std::size_t i) {
        const std::size_t a = i / gamma_grid.size();
        const std::size_t b = i % gamma_grid.size();
        RunConfig cell_cfg = cfg;
        cell_cfg.penalty.iota1 = iota1_grid[a];
        cell_cfg.penalty.iota2 = 0.0;
        cell_cfg.penalty.gamma = gamma_grid[b];
        TrainResult run = finetune(cell_cfg, pretrained);
        SweepCell& cell = result.cells[i];
        cell.iota1 = iota1_grid[a];
        cell.gamma = gamma_grid[b];
        cell.downstream_acc = run.metrics.back().downstream_acc;
        cell.upstream_acc = run.metrics.back().upstream_acc;
        cell.final_discrepancy = run.metrics.back().discrepancy;
    });

    result.best_index = 0;
    for (std::size_t i = 1; i < result.cells.size(); ++i) {
        if (result.cells[i].downstream_acc > result.cells[result.best_index].downstream_acc) {
            result.best_index = i;
        }
    }
    return result;
}

void write_forgetting_csv(const std::string& path, const ForgettingReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("forgetting-test: cannot open '" + path + "' for writing");
    }
    out << "method,seed,downstream_acc,upstream_acc,final_discrepancy\n";
    for (const MethodOutcome& outcome : report.outcomes) {
        out << to_string(outcome.method) << ',' << outcome.seed << ','
            << format_double(outcome.downstream_acc) << ','
            << format_double(outcome.upstream_acc) << ','
            << format_double(outcome.final_discrepancy) << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("forgetting-test: write to '" + path + "' failed");
    }
}

void write_sweep_csv(const std::string& path, const SweepResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("sweep: cannot open '" + path + "' for writing");
    }
    out << "iota1,gamma,downstream_acc,upstream_acc,final_discrepancy\n";
    for (const SweepCell& cell : result.cells) {
        out << format_double(cell.iota1) << ',' << format_double(cell.gamma) << ','
            << format_double(cell.downstream_acc) << ',' << format_double(cell.upstream_acc)
            << ',' << format_double(cell.final_discrepancy) << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("sweep: write to '" + path + "' failed");
    }
}

// ---------------------------------------------------------------------------
// Coupled-weight-decay delay defect.
// ---------------------------------------------------------------------------

namespace {

// Error-free transforms.  Each pair (hi, lo) represents its real-arithmetic
// result exactly as hi + lo.  Both predicates below are decided in exact
// arithmetic: near the defect boundary a plainly rounded evaluation of the
// two forms can land on opposite sides, and the scan's contract is that they
// agree cell for cell.
struct ErrPair {
    double hi;
    double lo;
};

ErrPair two_sum(double a, double b) {
    const double s = a + b;
    const double bb = s - a;
    return {s, (a - (s - bb)) + (b - bb)};
}

ErrPair two_prod(double a, double b) {
    const double p = a * b;
    return {p, std::fma(a, b, -p)};
}

// Exact sign of terms[0] + ... + terms[count-1].  Growing a nonoverlapping
// expansion one term at a time keeps the running sum exact; the largest
// nonzero component then carries the sign of the total.
int exact_sum_sign(const double* terms, int count) {
    double expansion[8];
    int size = 0;
    for (int i = 0; i < count; ++i) {
        double carry = terms[i];
        for (int j = 0; j < size; ++j) {
            const ErrPair sum = two_sum(carry, expansion[j]);
            expansion[j] = sum.lo;
            carry = sum.hi;
        }
        expansion[size++] = carry;
    }
    for (int i = size - 1; i >= 0; --i) {
        if (expansion[i] != 0.0) return expansion[i] > 0.0 ? 1 : -1;
    }
    return 0;
}

}  // namespace

DelayDefectResult delay_defect_scan(const std::vector<double>& theta_grid,
                                    const std::vector<double>& eta_grad_grid,
                                    const std::vector<double>& lambda_grid) {
    if (theta_grid.empty() || eta_grad_grid.empty() || lambda_grid.empty()) {
        throw ConfigError("delay-defect: grids must be non-empty");
    }
    for (double lambda : lambda_grid) {
        if (!(lambda >= 0.0 && lambda <= 1.0)) {
            throw ConfigError("delay-defect: lambda grid values must lie in [0, 1], got " +
                              std::to_string(lambda));
        }
    }

    DelayDefectResult result;
    result.cells.reserve(theta_grid.size() * eta_grad_grid.size() * lambda_grid.size());
    for (double theta : theta_grid) {
        for (double eta_grad : eta_grad_grid) {
            for (double lambda : lambda_grid) {
                DelayDefectCell cell;
                cell.theta = theta;
                cell.eta_grad = eta_grad;
                cell.lambda = lambda;

                // Both steps share the plain-descent target theta - eta_grad;
                // the decayed step subtracts lambda * theta on top.  Keep the
                // two quantities as exact hi/lo pairs.
                const ErrPair plain = two_sum(theta, -eta_grad);
                const ErrPair decay = two_prod(lambda, theta);

                // Direct form: |(1-lambda)*theta - eta_grad| > |theta - eta_grad|
                // (comparing the squares of two reals compares their absolute
                // values).  sign(x) * x == |x| term by term, exactly.
                const double decayed_terms[4] = {plain.hi, plain.lo, -decay.hi, -decay.lo};
                const int decayed_sign = exact_sum_sign(decayed_terms, 4);
                const double plain_terms[2] = {plain.hi, plain.lo};
                const int plain_sign = exact_sum_sign(plain_terms, 2);
                const double magnitude_diff[6] = {
                    decayed_sign * plain.hi,  decayed_sign * plain.lo,
                    -decayed_sign * decay.hi, -decayed_sign * decay.lo,
                    -plain_sign * plain.hi,   -plain_sign * plain.lo};
                cell.defect_direct = exact_sum_sign(magnitude_diff, 6) > 0;

                // Closed form: eta_grad > (1 - lambda/2) * theta for positive
                // theta, reversed for negative theta.  Doubling both sides and
                // moving theta across gives the exactly testable
                // 2*(eta_grad - theta) + lambda*theta > 0.
                if (lambda > 0.0 && theta != 0.0) {
                    const ErrPair shifted = two_sum(eta_grad, -theta);
                    const double boundary_terms[4] = {2.0 * shifted.hi, 2.0 * shifted.lo,
                                                      decay.hi, decay.lo};
                    const int boundary_sign = exact_sum_sign(boundary_terms, 4);
                    cell.defect_closed = theta > 0.0 ? boundary_sign > 0 : boundary_sign < 0;
                } else {
                    cell.defect_closed = false;
                }

                const double decayed_step = (1.0 - lambda) * theta - eta_grad;
                const double plain_step = theta - eta_grad;
                cell.margin = decayed_step * decayed_step - plain_step * plain_step;

                if (cell.defect_direct != cell.defect_closed) {
                    result.disagreements += 1;
                }
                result.cells.push_back(cell);
            }
        }
    }
    return result;
}

void write_delay_defect_csv(const std::string& path, const DelayDefectResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("delay-defect: cannot open '" + path + "' for writing");
    }
    out << "theta,eta_grad,lambda,defect_direct,defect_closed,margin\n";
    for (const DelayDefectCell& cell : result.cells) {
        out << format_double(cell.theta) << ',' << format_double(cell.eta_grad) << ','
            << format_double(cell.lambda) << ',' << (cell.defect_direct ? 1 : 0) << ','
            << (cell.defect_closed ? 1 : 0) << ',' << format_double(cell.margin) << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("delay-defect: write to '" + path + "' failed");
    }
}

}  // namespace olor
