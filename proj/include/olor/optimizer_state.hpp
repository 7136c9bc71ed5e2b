#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace olor {

/// Per-layer optimizer buffers.  `m` is the momentum / first moment, `v` the
/// second moment (sized only for Adam-family updates), and `d` the running
/// discrepancy theta - theta_0 maintained by the rollback recurrence.
struct LayerOptState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    Eigen::VectorXd d;
};

struct OptimizerState {
    std::int64_t t = 0;  // global timestep; incremented once per model step
    std::vector<LayerOptState> layers;
};

}  // namespace olor
