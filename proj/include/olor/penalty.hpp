#pragma once

namespace olor {

/// Layer-wise rollback schedule.  Shallow layers (small index) roll back
/// harder than deep ones: the raw penalty decays from iota1 at index 0 to
/// iota2 at index depth_norm, with curvature gamma.
struct PenaltyConfig {
    double iota1 = 0.0;   // maximum rollback level, at the shallowest layer
    double iota2 = 0.0;   // minimum rollback level, at the deepest layer
    double gamma = 1.0;   // decay curvature; larger keeps deep layers freer
    int depth_norm = 1;   // n, the deepest penalised layer index
    double base_lr = 0.0; // initial learning rate eta dividing the stored form
};

/// Throws ConfigError unless 0 <= iota2 <= iota1 <= 1, gamma > 0,
/// depth_norm >= 1 and base_lr > 0.
void validate(const PenaltyConfig& cfg);

/// f(i) = w * iota1 + (1 - w) * iota2 with w = (1 - i/n)^gamma, evaluated as
/// a convex combination so the endpoints are exact: f(0) == iota1 and
/// f(n) == iota2 bit-for-bit.
double raw_penalty(const PenaltyConfig& cfg, int layer_index);

/// lambda_i = f(i) / base_lr, the form stored by the optimizers so that the
/// per-step rollback lr_t * lambda_i scales with the schedule.
double stored_penalty(const PenaltyConfig& cfg, int layer_index);

/// rho = (lr_t / base_lr) * f(i), the fraction of the accumulated weight
/// change undone this step.  Throws ScheduleIncompatibilityError when the
/// schedule pushes rho above 1.
double effective_rollback(const PenaltyConfig& cfg, int layer_index, double lr_t);

}  // namespace olor
