#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "olor/param_store.hpp"

namespace olor {

enum class Activation { tanh, relu };
enum class Loss { mse, softmax_cross_entropy };

const char* to_string(Activation activation);
const char* to_string(Loss loss);

/// Fully connected network: layer_sizes = {inputs, hidden..., outputs}.  The
/// activation applies to every layer except the last, whose raw outputs are
/// the logits (or the regression outputs under mse).
struct MlpSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::tanh;
    Loss loss = Loss::softmax_cross_entropy;
};

void validate(const MlpSpec& spec);

/// Number of weight layers, layer_sizes.size() - 1.
int weight_layer_count(const MlpSpec& spec);

/// One flat parameter layer per weight matrix: the column-major matrix
/// entries followed by the bias.  Entries are drawn uniformly from
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)] using the pinned generator, so equal
/// seeds build bit-identical models.
ModelParams build_model(const MlpSpec& spec, std::uint64_t seed);

/// Samples are columns: inputs is (features x batch).  `targets` is used by
/// mse, `labels` by softmax_cross_entropy.
struct Batch {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
    Eigen::VectorXi labels;
};

struct ForwardCache {
    std::vector<Eigen::MatrixXd> activations;  // [0] = inputs, back() = outputs
    std::vector<Eigen::MatrixXd> pre_activations;
};

/// Forward pass; returns the output matrix (outputs x batch) and optionally
/// fills the cache for backward.  Throws NumericError naming the layer when
/// an intermediate goes non-finite.
Eigen::MatrixXd forward(const MlpSpec& spec, const ModelParams& model,
                        const Eigen::MatrixXd& inputs, ForwardCache* cache = nullptr);

double loss_value(const MlpSpec& spec, const Eigen::MatrixXd& outputs, const Batch& batch);

/// Fraction of columns whose argmax row equals the label.
double accuracy(const Eigen::MatrixXd& outputs, const Eigen::VectorXi& labels);

struct BackwardResult {
    double loss = 0.0;
    std::vector<Eigen::VectorXd> grads;  // flat, matching the layer layout
};

/// Mean-reduced loss and exact gradients via backprop; requires the cache
/// from a forward pass over batch.inputs.
BackwardResult backward(const MlpSpec& spec, const ModelParams& model, const ForwardCache& cache,
                        const Batch& batch);

/// Max relative disagreement between backprop and central finite differences
/// over every parameter: |g_fd - g_an| / max(|g_fd|, |g_an|, 1).
/// epsilon must lie in [1e-7, 1e-3].
double grad_check(const MlpSpec& spec, const ModelParams& model, const Batch& batch,
                  double epsilon);

/// Copy of the model with the last layer resized to new_output_size,
/// freshly initialised from seed, and its pretrained reference cleared.
ModelParams reinit_head(const MlpSpec& spec, const ModelParams& model, int new_output_size,
                        std::uint64_t seed);

/// Named network shapes exercised by the gradient checker and the CLI.
std::vector<std::pair<std::string, MlpSpec>> shipped_model_specs();

}  // namespace olor
