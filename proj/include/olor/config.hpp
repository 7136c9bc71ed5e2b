#pragma once

#include <string>
#include <vector>

#include "olor/harness.hpp"

namespace olor {

/// Everything a CLI invocation needs beyond the RunConfig itself.
struct CliConfig {
    RunConfig run;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};  // forgetting-test seed list
    std::vector<Method> methods = {Method::full, Method::olor_adam};
    std::vector<double> sweep_iota1 = {0.0,  1e-4, 5e-4, 1e-3, 5e-3,
                                       1e-2, 5e-2, 1e-1, 5e-1, 1.0};
    std::vector<double> sweep_gamma = {1.0, 2.0, 4.0};
    int rollback_steps = 50;
    std::vector<double> delay_theta;     // empty selects the built-in grid
    std::vector<double> delay_eta_grad;
    std::vector<double> delay_lambda;
    std::string pretrained_checkpoint;   // reuse instead of pre-training in-process
    std::string finetuned_checkpoint;    // reuse instead of fine-tuning in-process
    bool dump_datasets = false;
    int grad_check_draws = 20;
    double grad_check_epsilon = 1e-5;
};

/// Built-in defaults: a 2-feature, 3-class cluster task with a pi/3-rotated,
/// offset downstream variant, a 3-hidden-layer tanh network and Adam.
CliConfig default_config();

std::vector<std::string> preset_names();

/// Applies a named hyper-parameter preset (rollback levels, curvature and
/// method family).  Throws ConfigError for unknown names, listing the
/// available ones.
void apply_preset(CliConfig& cfg, const std::string& name);

/// Applies one `key = value` assignment.  `where` prefixes error messages
/// (file:line or "--set").
void apply_assignment(CliConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where);

/// Parses a flat key = value file ('#' comments).  A `preset` key is applied
/// before every other assignment so explicit keys override preset values.
CliConfig parse_config_file(const std::string& path);

/// Semantic validation of the assembled configuration (delegates to the
/// module validators); call after all assignments.
void validate(const CliConfig& cfg);

/// Echoes the effective configuration in the same key = value syntax the
/// parser accepts.
std::string render_config(const CliConfig& cfg);

}  // namespace olor
