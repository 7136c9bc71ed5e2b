#include "olor/penalty.hpp"

#include <cmath>
#include <string>

#include "olor/errors.hpp"

namespace olor {

void validate(const PenaltyConfig& cfg) {
    if (!(cfg.iota2 >= 0.0)) {
        throw ConfigError("penalty: iota2 must satisfy iota2 >= 0, got " + std::to_string(cfg.iota2));
    }
    if (!(cfg.iota1 >= cfg.iota2)) {
        throw ConfigError("penalty: iota1 >= iota2 violated (iota1=" + std::to_string(cfg.iota1) +
                          ", iota2=" + std::to_string(cfg.iota2) + ")");
    }
    if (!(cfg.iota1 <= 1.0)) {
        throw ConfigError("penalty: iota1 must satisfy iota1 <= 1, got " + std::to_string(cfg.iota1));
    }
    if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma)) {
        throw ConfigError("penalty: gamma must be positive and finite, got " + std::to_string(cfg.gamma));
    }
    if (cfg.depth_norm < 1) {
        throw ConfigError("penalty: depth_norm must be >= 1, got " + std::to_string(cfg.depth_norm));
    }
    if (!(cfg.base_lr > 0.0) || !std::isfinite(cfg.base_lr)) {
        throw ConfigError("penalty: base_lr must be positive and finite, got " + std::to_string(cfg.base_lr));
    }
}

namespace {

void check_index(const PenaltyConfig& cfg, int layer_index) {
    if (layer_index < 0 || layer_index > cfg.depth_norm) {
        throw ConfigError("penalty: layer index " + std::to_string(layer_index) +
                          " outside [0, " + std::to_string(cfg.depth_norm) + "]");
    }
}

}  // namespace

double raw_penalty(const PenaltyConfig& cfg, int layer_index) {
    validate(cfg);
    check_index(cfg, layer_index);
    // Equal levels mean a depth-independent penalty; returning it directly
    // keeps the value bit-constant across layers, which the convex
    // combination below would not (its two roundings can wobble by an ulp).
    if (cfg.iota1 == cfg.iota2) {
        return cfg.iota1;
    }
    const double depth = static_cast<double>(layer_index) / static_cast<double>(cfg.depth_norm);
    const double w = std::pow(1.0 - depth, cfg.gamma);
    return w * cfg.iota1 + (1.0 - w) * cfg.iota2;
}

double stored_penalty(const PenaltyConfig& cfg, int layer_index) {
    return raw_penalty(cfg, layer_index) / cfg.base_lr;
}

double effective_rollback(const PenaltyConfig& cfg, int layer_index, double lr_t) {
    if (!(lr_t >= 0.0) || !std::isfinite(lr_t)) {
        throw ConfigError("penalty: lr_t must be finite and >= 0, got " + std::to_string(lr_t));
    }
    const double rho = (lr_t / cfg.base_lr) * raw_penalty(cfg, layer_index);
    if (rho > 1.0) {
        throw ScheduleIncompatibilityError(
            "rollback fraction rho=" + std::to_string(rho) + " exceeds 1 at layer " +
            std::to_string(layer_index) + " (lr_t=" + std::to_string(lr_t) +
            "); lower iota1 or the learning rate");
    }
    return rho;
}

}  // namespace olor
