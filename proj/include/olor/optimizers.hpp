#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "olor/optimizer_state.hpp"
#include "olor/param_store.hpp"
#include "olor/penalty.hpp"

namespace olor {

struct HyperParams {
    double base_lr = 1e-3;       // eta, the schedule's initial learning rate
    double momentum = 0.9;       // beta for the SGD family
    double beta1 = 0.9;          // Adam first-moment decay
    double beta2 = 0.999;        // Adam second-moment decay
    double epsilon = 1e-8;       // Adam denominator guard
    double weight_decay = 0.0;   // coupled decay factor for the wd-sgd baseline
    double l2sp_alpha = 0.0;     // anchor strength for the l2sp baseline
    double head_lr_scale = 1.0;  // lr multiplier for layers without a reference
    double clip_norm = 0.0;      // global gradient max-norm; 0 disables clipping
};

void validate(const HyperParams& hyper);

/// Zero-initialised state matching the model's layer sizes.  `v` is sized
/// only when `second_moment` is set (Adam family).
OptimizerState make_state(const ModelParams& model, bool second_moment);

// ---------------------------------------------------------------------------
// Per-layer update kernels.  Each takes this step's scheduler learning rate
// and mutates the layer values and its state slot in place.  The rollback
// variants take the stored penalty lambda_i = f(i)/eta and apply
// rho = lr_t * lambda_i; they maintain d as the accumulated change from the
// pre-trained reference and are bit-identical to their host optimizer when
// lambda_i == 0.
// ---------------------------------------------------------------------------

void sgd_momentum_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                       double lr_t, double beta);

void olor_sgd_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                   double lr_t, double beta, double stored_lambda);

void adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
               double lr_t, const HyperParams& hyper, std::int64_t t);

void olor_adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                    double lr_t, const HyperParams& hyper, std::int64_t t, double stored_lambda);

/// Coupled weight decay: theta <- (1 - lambda_wd) * theta - lr_t * grad.
void weight_decay_step(LayerParams& layer, const Eigen::VectorXd& grad, double lr_t,
                       double lambda_wd);

/// SGD with an L2 pull toward the pre-trained reference of strength alpha;
/// alpha == 0 reduces bit-identically to sgd_momentum_step.
void l2sp_sgd_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                   double lr_t, double beta, double alpha);

void l2sp_adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                    double lr_t, const HyperParams& hyper, std::int64_t t, double alpha);

/// Max elementwise error of the maintained discrepancy d against
/// theta - theta_0, relative to max(|theta|, |theta_0|, 1).  Layers without
/// a pre-trained reference are skipped.
double audit_discrepancy(const OptimizerState& state, const ModelParams& model);

// ---------------------------------------------------------------------------
// Learning-rate schedules.
// ---------------------------------------------------------------------------

struct LrSchedule {
    enum class Kind { constant, cosine, step_decay };
    Kind kind = Kind::cosine;
    double base_lr = 1e-3;
    std::int64_t total_steps = 1;
    double floor_lr = 0.0;          // cosine endpoint / step-decay floor
    double decay_factor = 0.1;      // step_decay multiplier
    std::int64_t decay_period = 1;  // step_decay period in steps
};

void validate(const LrSchedule& schedule);

/// Learning rate at timestep t in [1, total_steps].  lr_at(1) == base_lr
/// exactly; the cosine schedule ends at floor_lr exactly.
double lr_at(const LrSchedule& schedule, std::int64_t t);

// ---------------------------------------------------------------------------
// Whole-model stepping.
// ---------------------------------------------------------------------------

enum class Method { full, linear, l2sp, olor_sgd, olor_adam, wd_sgd };
enum class BaseOptimizer { sgd, adam };

const char* to_string(Method method);
const char* to_string(BaseOptimizer base);

/// Dispatches per-layer updates for one training method.  Stored rollback
/// penalties are computed once at construction from the penalty schedule;
/// layers without a pre-trained reference get lambda_i = 0 and the head
/// learning-rate scale.
class ModelOptimizer {
  public:
    ModelOptimizer(Method method, BaseOptimizer base, const HyperParams& hyper,
                   const PenaltyConfig& penalty, const ModelParams& model);

    /// Applies one optimization step; expects one gradient per layer.
    void step(ModelParams& model, std::vector<Eigen::VectorXd> grads, double lr_t);

    const OptimizerState& state() const { return state_; }
    OptimizerState& state() { return state_; }
    double stored_lambda(std::size_t layer) const { return stored_lambda_.at(layer); }
    Method method() const { return method_; }
    BaseOptimizer base() const { return base_; }

  private:
    Method method_;
    BaseOptimizer base_;
    HyperParams hyper_;
    std::vector<double> stored_lambda_;
    OptimizerState state_;
};

}  // namespace olor
