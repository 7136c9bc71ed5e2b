#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "olor/models.hpp"
#include "olor/optimizers.hpp"
#include "olor/param_store.hpp"
#include "olor/penalty.hpp"
#include "olor/tasks.hpp"

namespace olor {

/// One experiment: pre-train on the upstream task, fine-tune on the
/// downstream task with the chosen method.  penalty.depth_norm and
/// penalty.base_lr, and the schedule's base_lr / total_steps, are resolved
/// per run from the model and hyper-parameters.
struct RunConfig {
    TaskSpec upstream;
    TaskSpec downstream;
    MlpSpec model;
    Method method = Method::full;
    BaseOptimizer base_optimizer = BaseOptimizer::adam;
    PenaltyConfig penalty;
    HyperParams hyper;
    LrSchedule schedule;
    int epochs = 30;           // fine-tuning epochs
    int pretrain_epochs = 100;
    int batch_size = 32;
    std::uint64_t seed = 1;
};

void validate(const RunConfig& cfg);

/// Model spec whose head matches the downstream label count.
MlpSpec downstream_spec(const RunConfig& cfg);

struct MetricsRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double train_loss = 0.0;
    double downstream_acc = 0.0;       // validation accuracy of the trained task
    double upstream_acc = 0.0;         // retention accuracy under the stored upstream head
    double discrepancy = 0.0;          // ||theta - theta_0|| over referenced layers
    std::vector<double> layer_discrepancy;
    std::vector<double> effective_rho;  // lr_t * lambda_i per layer at this step
};

using MetricsLog = std::vector<MetricsRecord>;

/// Column order is a documented interface:
/// step,epoch,train_loss,downstream_acc,upstream_acc,discrepancy,
/// disc_layer_<k>...,rho_layer_<k>...
std::string metrics_csv_header(int weight_layers);
void write_metrics_csv(const std::string& path, const MetricsLog& log);

struct TrainResult {
    Checkpoint checkpoint;
    MetricsLog metrics;
};

/// Trains a fresh model on the upstream task and freezes the result as the
/// pre-trained reference.  Metrics report upstream validation accuracy in
/// both accuracy columns.
TrainResult pretrain(const RunConfig& cfg);

/// Re-initialises the head for the downstream task and trains with
/// cfg.method, recording retention metrics against the stored upstream head
/// every epoch.
TrainResult finetune(const RunConfig& cfg, const Checkpoint& pretrained);

struct MethodOutcome {
    Method method = Method::full;
    std::uint64_t seed = 0;
    double downstream_acc = 0.0;
    double upstream_acc = 0.0;
    double final_discrepancy = 0.0;
    MetricsLog metrics;
};

struct ForgettingReport {
    std::vector<MethodOutcome> outcomes;  // method-major, then seed order
};

/// Paired comparison: one pre-training per seed shared by every method, then
/// one fine-tune per (method, seed).
ForgettingReport forgetting_test(const RunConfig& cfg, const std::vector<Method>& methods,
                                 const std::vector<std::uint64_t>& seeds, int jobs = 1);

void write_forgetting_csv(const std::string& path, const ForgettingReport& report);

struct RollbackRow {
    int k = 0;
    double blend = 0.0;  // fraction of the fine-tuned weights kept, (K-k)/K
    double upstream_acc = 0.0;
    double downstream_acc = 0.0;
    double discrepancy = 0.0;
};

/// Interpolates the referenced layers linearly from the fine-tuned weights
/// (k = 0) back to the pre-trained reference (k = K, exact copy) without any
/// training, evaluating both tasks at every point.  The head layers keep
/// their fine-tuned values; upstream accuracy uses the stored upstream head.
std::vector<RollbackRow> zero_shot_rollback(const RunConfig& cfg, const Checkpoint& finetuned,
                                            const Checkpoint& pretrained, int steps);

void write_rollback_csv(const std::string& path, const std::vector<RollbackRow>& rows);

struct SweepCell {
    double iota1 = 0.0;
    double gamma = 1.0;
    double downstream_acc = 0.0;
    double upstream_acc = 0.0;
    double final_discrepancy = 0.0;
};

struct SweepResult {
    std::vector<SweepCell> cells;   // iota1-major, then gamma order
    std::size_t best_index = 0;     // highest downstream accuracy, first on ties
};

/// One fine-tune per (iota1, gamma) cell from the shared pre-trained
/// checkpoint, with iota2 pinned to 0 and everything else from cfg.
SweepResult sweep(const RunConfig& cfg, const Checkpoint& pretrained,
                  const std::vector<double>& iota1_grid, const std::vector<double>& gamma_grid,
                  int jobs = 1);

void write_sweep_csv(const std::string& path, const SweepResult& result);

struct DelayDefectCell {
    double theta = 0.0;
    double eta_grad = 0.0;  // eta * g for the step
    double lambda = 0.0;
    bool defect_direct = false;  // decayed step lands farther from zero than plain descent
    bool defect_closed = false;  // sign test eta*g vs (1 - lambda/2) * theta
    double margin = 0.0;         // decayed^2 - plain^2 distance difference
};

struct DelayDefectResult {
    std::vector<DelayDefectCell> cells;  // theta-major, then eta_grad, then lambda
    std::int64_t disagreements = 0;
};

/// Evaluates both defect predicates for coupled weight decay on the full
/// grid.  The direct form compares squared distances to the post-step
/// target; the closed form is its algebraic reduction.
DelayDefectResult delay_defect_scan(const std::vector<double>& theta_grid,
                                    const std::vector<double>& eta_grad_grid,
                                    const std::vector<double>& lambda_grid);

void write_delay_defect_csv(const std::string& path, const DelayDefectResult& result);

}  // namespace olor
