#include "olor/optimizers.hpp"

#include <cassert>
#include <cmath>
#include <string>

#include "olor/errors.hpp"

namespace olor {

void validate(const HyperParams& hyper) {
    if (!(hyper.base_lr > 0.0) || !std::isfinite(hyper.base_lr)) {
        throw ConfigError("hyper: base_lr must be positive and finite, got " +
                          std::to_string(hyper.base_lr));
    }
    if (!(hyper.momentum >= 0.0 && hyper.momentum < 1.0)) {
        throw ConfigError("hyper: momentum must lie in [0, 1), got " +
                          std::to_string(hyper.momentum));
    }
    if (!(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0)) {
        throw ConfigError("hyper: beta1 must lie in [0, 1), got " + std::to_string(hyper.beta1));
    }
    if (!(hyper.beta2 >= 0.0 && hyper.beta2 < 1.0)) {
        throw ConfigError("hyper: beta2 must lie in [0, 1), got " + std::to_string(hyper.beta2));
    }
    if (!(hyper.epsilon > 0.0)) {
        throw ConfigError("hyper: epsilon must be positive, got " + std::to_string(hyper.epsilon));
    }
    if (!(hyper.weight_decay >= 0.0 && hyper.weight_decay <= 1.0)) {
        throw ConfigError("hyper: weight_decay must lie in [0, 1], got " +
                          std::to_string(hyper.weight_decay));
    }
    if (!(hyper.l2sp_alpha >= 0.0)) {
        throw ConfigError("hyper: l2sp_alpha must be >= 0, got " +
                          std::to_string(hyper.l2sp_alpha));
    }
    if (!(hyper.head_lr_scale >= 0.0)) {
        throw ConfigError("hyper: head_lr_scale must be >= 0, got " +
                          std::to_string(hyper.head_lr_scale));
    }
    if (!(hyper.clip_norm >= 0.0)) {
        throw ConfigError("hyper: clip_norm must be >= 0, got " + std::to_string(hyper.clip_norm));
    }
}

OptimizerState make_state(const ModelParams& model, bool second_moment) {
    OptimizerState state;
    state.layers.reserve(model.layers.size());
    for (const LayerParams& layer : model.layers) {
        LayerOptState s;
        s.m = Eigen::VectorXd::Zero(layer.values.size());
        if (second_moment) {
            s.v = Eigen::VectorXd::Zero(layer.values.size());
        }
        s.d = Eigen::VectorXd::Zero(layer.values.size());
        state.layers.push_back(std::move(s));
    }
    return state;
}

namespace {

void check_grad(const LayerParams& layer, const Eigen::VectorXd& grad) {
    if (grad.size() != layer.values.size()) {
        throw ConfigError("optimizer: gradient length " + std::to_string(grad.size()) +
                          " != parameter length " + std::to_string(layer.values.size()) +
                          " for layer '" + layer.name + "'");
    }
    if (!grad.allFinite()) {
        throw NumericError("optimizer: non-finite gradient for layer '" + layer.name + "'");
    }
}

void check_state(const LayerOptState& state, const LayerParams& layer, bool second_moment) {
    if (state.m.size() != layer.values.size() || state.d.size() != layer.values.size() ||
        (second_moment && state.v.size() != layer.values.size())) {
        throw ConfigError("optimizer: state buffers do not match layer '" + layer.name + "'");
    }
}

double rollback_coefficient(double lr_t, double stored_lambda) {
    const double rho = lr_t * stored_lambda;
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw ScheduleIncompatibilityError(
            "rollback fraction rho=" + std::to_string(rho) + " outside [0, 1] (lr_t=" +
            std::to_string(lr_t) + ", lambda_i=" + std::to_string(stored_lambda) + ")");
    }
    return rho;
}

void require_reference(const LayerParams& layer, double coefficient, const char* what) {
    if (coefficient != 0.0 && !layer.pretrained) {
        throw ConfigError(std::string("optimizer: ") + what + " needs a pretrained reference on layer '" +
                          layer.name + "'");
    }
}

/// eta_t * m after the momentum update m <- beta m + (1 - beta) g.  Shared by
/// the plain, rollback and anchored SGD variants so the lambda == 0 and
/// alpha == 0 reductions hold bit-for-bit.
Eigen::VectorXd sgd_direction(LayerOptState& state, const Eigen::VectorXd& grad, double lr_t,
                              double beta) {
    state.m = beta * state.m + (1.0 - beta) * grad;
    return lr_t * state.m;
}

/// eta_t * mhat / (sqrt(vhat) + eps) after the moment updates and bias
/// correction at timestep t.  Shared by the Adam variants for the same
/// bit-identical-reduction reason as sgd_direction.
Eigen::VectorXd adam_direction(LayerOptState& state, const Eigen::VectorXd& grad, double lr_t,
                               const HyperParams& hyper, std::int64_t t) {
    if (t < 1) {
        throw ConfigError("optimizer: Adam timestep must be >= 1, got " + std::to_string(t));
    }
    state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad;
    state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
    const double correction1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double correction2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    const Eigen::VectorXd m_hat = state.m / correction1;
    const Eigen::VectorXd v_hat = state.v / correction2;
    return lr_t * (m_hat.array() / (v_hat.array().sqrt() + hyper.epsilon)).matrix();
}

#ifndef NDEBUG
double layer_audit(const LayerOptState& state, const LayerParams& layer) {
    if (!layer.pretrained) return 0.0;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < layer.values.size(); ++j) {
        const double expected = layer.values[j] - (*layer.pretrained)[j];
        const double denom =
            std::max({std::abs(layer.values[j]), std::abs((*layer.pretrained)[j]), 1.0});
        worst = std::max(worst, std::abs(state.d[j] - expected) / denom);
    }
    return worst;
}
#endif

}  // namespace

void sgd_momentum_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                       double lr_t, double beta) {
    check_grad(layer, grad);
    check_state(state, layer, false);
    const Eigen::VectorXd update = sgd_direction(state, grad, lr_t, beta);
    layer.values -= update;
}

void olor_sgd_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                   double lr_t, double beta, double stored_lambda) {
    check_grad(layer, grad);
    check_state(state, layer, false);
    require_reference(layer, stored_lambda, "rollback");
    const double rho = rollback_coefficient(lr_t, stored_lambda);
    const Eigen::VectorXd update = sgd_direction(state, grad, lr_t, beta);
    layer.values -= rho * state.d + (1.0 - rho) * update;
    state.d = (1.0 - rho) * (state.d - update);
    assert(layer_audit(state, layer) < 1e-8);
}

void adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad, double lr_t,
               const HyperParams& hyper, std::int64_t t) {
    check_grad(layer, grad);
    check_state(state, layer, true);
    const Eigen::VectorXd update = adam_direction(state, grad, lr_t, hyper, t);
    layer.values -= update;
}

void olor_adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                    double lr_t, const HyperParams& hyper, std::int64_t t, double stored_lambda) {
    check_grad(layer, grad);
    check_state(state, layer, true);
    require_reference(layer, stored_lambda, "rollback");
    const double rho = rollback_coefficient(lr_t, stored_lambda);
    const Eigen::VectorXd update = adam_direction(state, grad, lr_t, hyper, t);
    layer.values -= rho * state.d + (1.0 - rho) * update;
    state.d = (1.0 - rho) * (state.d - update);
    assert(layer_audit(state, layer) < 1e-8);
}

void weight_decay_step(LayerParams& layer, const Eigen::VectorXd& grad, double lr_t,
                       double lambda_wd) {
    check_grad(layer, grad);
    if (!(lambda_wd >= 0.0 && lambda_wd <= 1.0)) {
        throw ConfigError("optimizer: weight decay must lie in [0, 1], got " +
                          std::to_string(lambda_wd));
    }
    layer.values = (1.0 - lambda_wd) * layer.values - lr_t * grad;
}

void l2sp_sgd_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                   double lr_t, double beta, double alpha) {
    check_grad(layer, grad);
    check_state(state, layer, false);
    require_reference(layer, alpha, "the L2 anchor");
    const Eigen::VectorXd update = sgd_direction(state, grad, lr_t, beta);
    if (alpha == 0.0) {
        layer.values -= update;
    } else {
        layer.values -= update + (lr_t * alpha) * (layer.values - *layer.pretrained);
    }
}

void l2sp_adam_step(LayerOptState& state, LayerParams& layer, const Eigen::VectorXd& grad,
                    double lr_t, const HyperParams& hyper, std::int64_t t, double alpha) {
    check_grad(layer, grad);
    check_state(state, layer, true);
    require_reference(layer, alpha, "the L2 anchor");
    const Eigen::VectorXd update = adam_direction(state, grad, lr_t, hyper, t);
    if (alpha == 0.0) {
        layer.values -= update;
    } else {
        layer.values -= update + (lr_t * alpha) * (layer.values - *layer.pretrained);
    }
}

double audit_discrepancy(const OptimizerState& state, const ModelParams& model) {
    if (state.layers.size() != model.layers.size()) {
        throw ConfigError("audit: state has " + std::to_string(state.layers.size()) +
                          " layers, model has " + std::to_string(model.layers.size()));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        const LayerParams& layer = model.layers[k];
        if (!layer.pretrained) continue;
        const Eigen::VectorXd& d = state.layers[k].d;
        if (d.size() != layer.values.size()) {
            throw ConfigError("audit: state buffer mismatch on layer '" + layer.name + "'");
        }
        for (Eigen::Index j = 0; j < layer.values.size(); ++j) {
            const double expected = layer.values[j] - (*layer.pretrained)[j];
            const double denom =
                std::max({std::abs(layer.values[j]), std::abs((*layer.pretrained)[j]), 1.0});
            worst = std::max(worst, std::abs(d[j] - expected) / denom);
        }
    }
    return worst;
}

void validate(const LrSchedule& schedule) {
    if (!(schedule.base_lr > 0.0) || !std::isfinite(schedule.base_lr)) {
        throw ConfigError("schedule: base_lr must be positive and finite, got " +
                          std::to_string(schedule.base_lr));
    }
    if (schedule.total_steps < 1) {
        throw ConfigError("schedule: total_steps must be >= 1, got " +
                          std::to_string(schedule.total_steps));
    }
    if (!(schedule.floor_lr >= 0.0 && schedule.floor_lr <= schedule.base_lr)) {
        throw ConfigError("schedule: floor_lr must lie in [0, base_lr], got " +
                          std::to_string(schedule.floor_lr));
    }
    if (schedule.kind == LrSchedule::Kind::step_decay) {
        if (!(schedule.decay_factor > 0.0 && schedule.decay_factor <= 1.0)) {
            throw ConfigError("schedule: decay_factor must lie in (0, 1], got " +
                              std::to_string(schedule.decay_factor));
        }
        if (schedule.decay_period < 1) {
            throw ConfigError("schedule: decay_period must be >= 1, got " +
                              std::to_string(schedule.decay_period));
        }
    }
}

double lr_at(const LrSchedule& schedule, std::int64_t t) {
    validate(schedule);
    if (t < 1 || t > schedule.total_steps) {
        throw ConfigError("schedule: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(schedule.total_steps) + "]");
    }
    switch (schedule.kind) {
        case LrSchedule::Kind::constant:
            return schedule.base_lr;
        case LrSchedule::Kind::cosine: {
            if (schedule.total_steps == 1) return schedule.base_lr;
            const double phase = static_cast<double>(t - 1) /
                                 static_cast<double>(schedule.total_steps - 1);
            const double w = 0.5 * (1.0 + std::cos(3.14159265358979323846 * phase));
            return w * schedule.base_lr + (1.0 - w) * schedule.floor_lr;
        }
        case LrSchedule::Kind::step_decay: {
            const std::int64_t drops = (t - 1) / schedule.decay_period;
            const double lr =
                schedule.base_lr * std::pow(schedule.decay_factor, static_cast<double>(drops));
            return std::max(schedule.floor_lr, lr);
        }
    }
    throw ConfigError("schedule: unknown kind");
}

const char* to_string(Method method) {
    switch (method) {
        case Method::full: return "full";
        case Method::linear: return "linear";
        case Method::l2sp: return "l2sp";
        case Method::olor_sgd: return "olor-sgd";
        case Method::olor_adam: return "olor-adam";
        case Method::wd_sgd: return "wd-sgd";
    }
    return "?";
}

const char* to_string(BaseOptimizer base) {
    switch (base) {
        case BaseOptimizer::sgd: return "sgd";
        case BaseOptimizer::adam: return "adam";
    }
    return "?";
}

namespace {

bool uses_second_moment(Method method, BaseOptimizer base) {
    switch (method) {
        case Method::olor_adam: return true;
        case Method::olor_sgd:
        case Method::wd_sgd: return false;
        case Method::full:
        case Method::linear:
        case Method::l2sp: return base == BaseOptimizer::adam;
    }
    return false;
}

}  // namespace

ModelOptimizer::ModelOptimizer(Method method, BaseOptimizer base, const HyperParams& hyper,
                               const PenaltyConfig& penalty, const ModelParams& model)
    : method_(method), base_(base), hyper_(hyper) {
    olor::validate(hyper_);
    olor::validate(model);
    state_ = make_state(model, uses_second_moment(method_, base_));
    stored_lambda_.assign(model.layers.size(), 0.0);
    if (method_ == Method::olor_sgd || method_ == Method::olor_adam) {
        olor::validate(penalty);
        for (std::size_t k = 0; k < model.layers.size(); ++k) {
            if (model.layers[k].pretrained) {
                stored_lambda_[k] = stored_penalty(penalty, model.layers[k].layer_index);
            }
        }
    }
}

void ModelOptimizer::step(ModelParams& model, std::vector<Eigen::VectorXd> grads, double lr_t) {
    if (grads.size() != model.layers.size() || state_.layers.size() != model.layers.size()) {
        throw ConfigError("optimizer: expected " + std::to_string(model.layers.size()) +
                          " gradients, got " + std::to_string(grads.size()));
    }
    if (!(lr_t >= 0.0) || !std::isfinite(lr_t)) {
        throw ConfigError("optimizer: lr_t must be finite and >= 0, got " + std::to_string(lr_t));
    }

    if (hyper_.clip_norm > 0.0) {
        double sum_sq = 0.0;
        for (const Eigen::VectorXd& g : grads) {
            sum_sq += g.squaredNorm();
        }
        const double norm = std::sqrt(sum_sq);
        if (norm > hyper_.clip_norm) {
            const double scale = hyper_.clip_norm / norm;
            for (Eigen::VectorXd& g : grads) {
                g *= scale;
            }
        }
    }

    state_.t += 1;
    try {
        for (std::size_t k = 0; k < model.layers.size(); ++k) {
            LayerParams& layer = model.layers[k];
            LayerOptState& s = state_.layers[k];
            const double lr_k = layer.pretrained ? lr_t : lr_t * hyper_.head_lr_scale;
            switch (method_) {
                case Method::full:
                    if (base_ == BaseOptimizer::sgd) {
                        sgd_momentum_step(s, layer, grads[k], lr_k, hyper_.momentum);
                    } else {
                        adam_step(s, layer, grads[k], lr_k, hyper_, state_.t);
                    }
                    break;
                case Method::linear:
                    if (layer.pretrained) break;  // backbone frozen
                    if (base_ == BaseOptimizer::sgd) {
                        sgd_momentum_step(s, layer, grads[k], lr_k, hyper_.momentum);
                    } else {
                        adam_step(s, layer, grads[k], lr_k, hyper_, state_.t);
                    }
                    break;
                case Method::l2sp: {
                    const double alpha = layer.pretrained ? hyper_.l2sp_alpha : 0.0;
                    if (base_ == BaseOptimizer::sgd) {
                        l2sp_sgd_step(s, layer, grads[k], lr_k, hyper_.momentum, alpha);
                    } else {
                        l2sp_adam_step(s, layer, grads[k], lr_k, hyper_, state_.t, alpha);
                    }
                    break;
                }
                case Method::olor_sgd:
                    olor_sgd_step(s, layer, grads[k], lr_k, hyper_.momentum, stored_lambda_[k]);
                    break;
                case Method::olor_adam:
                    olor_adam_step(s, layer, grads[k], lr_k, hyper_, state_.t, stored_lambda_[k]);
                    break;
                case Method::wd_sgd:
                    weight_decay_step(layer, grads[k], lr_k, hyper_.weight_decay);
                    break;
            }
        }
    } catch (const ScheduleIncompatibilityError& err) {
        throw ScheduleIncompatibilityError(std::string(err.what()) + " at step " +
                                           std::to_string(state_.t));
    }
}

}  // namespace olor
