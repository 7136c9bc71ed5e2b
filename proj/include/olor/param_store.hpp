#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "olor/optimizer_state.hpp"

namespace olor {

/// One layer's trainable parameters as an opaque flat vector, plus the frozen
/// pre-trained reference used as the rollback anchor.  Shape bookkeeping
/// (matrix vs bias slices) lives with the model, not here.
struct LayerParams {
    int layer_index = 0;                        // depth i; 0 is the shallowest
    std::string name;
    Eigen::VectorXd values;                     // theta
    std::optional<Eigen::VectorXd> pretrained;  // theta_0; absent for fresh layers
};

struct ModelParams {
    std::vector<LayerParams> layers;
    int depth_norm = 1;  // n, the deepest index entering the penalty schedule
};

/// Throws ConfigError when any structural invariant is violated: empty
/// layers, empty or non-finite values, pretrained length mismatch,
/// non-increasing layer indices, or indices outside [0, depth_norm].
void validate(const ModelParams& model);

/// Freezes every layer's current values as its pre-trained reference.
void snapshot_as_pretrained(ModelParams& model);

/// L2 distance between one layer's values and its pre-trained reference.
double layer_discrepancy_norm(const LayerParams& layer);

/// L2 norm of theta - theta_0 across all layers carrying a reference;
/// throws if any layer lacks one.
double discrepancy_norm(const ModelParams& model);

/// Per-layer discrepancy norms, 0.0 for layers without a reference.
std::vector<double> discrepancy_norms_per_layer(const ModelParams& model);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    std::uint32_t format_version = kCheckpointFormatVersion;
    ModelParams model;
    std::optional<OptimizerState> optimizer_state;
    std::uint64_t rng_seed = 0;
    std::int64_t step = 0;
};

/// Writes the versioned checkpoint format: a short human-readable text
/// header followed by little-endian binary float payloads.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Round-trips save_checkpoint output exactly.  Throws
/// CheckpointVersionError / CheckpointCorruptError / CheckpointValueError on
/// unsupported version, truncation or garbage, and non-finite payloads.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace olor
