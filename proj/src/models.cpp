#include "olor/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "olor/errors.hpp"
#include "olor/rng.hpp"

namespace olor {

const char* to_string(Activation activation) {
    switch (activation) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "?";
}

const char* to_string(Loss loss) {
    switch (loss) {
        case Loss::mse: return "mse";
        case Loss::softmax_cross_entropy: return "softmax-cross-entropy";
    }
    return "?";
}

void validate(const MlpSpec& spec) {
    if (spec.layer_sizes.size() < 2) {
        throw ConfigError("model spec: need at least input and output sizes, got " +
                          std::to_string(spec.layer_sizes.size()) + " entries");
    }
    for (int size : spec.layer_sizes) {
        if (size < 1) {
            throw ConfigError("model spec: layer sizes must be >= 1, got " + std::to_string(size));
        }
    }
}

int weight_layer_count(const MlpSpec& spec) {
    validate(spec);
    return static_cast<int>(spec.layer_sizes.size()) - 1;
}

namespace {

Eigen::VectorXd init_flat_layer(int fan_in, int fan_out, std::mt19937_64& gen) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::VectorXd flat(static_cast<Eigen::Index>(fan_out) * fan_in + fan_out);
    for (Eigen::Index j = 0; j < flat.size(); ++j) {
        flat[j] = rng::uniform(gen, -bound, bound);
    }
    return flat;
}

struct LayerView {
    Eigen::Map<const Eigen::MatrixXd> weights;
    Eigen::Map<const Eigen::VectorXd> bias;
};

LayerView view_layer(const MlpSpec& spec, const LayerParams& layer, int k) {
    const int in = spec.layer_sizes[static_cast<std::size_t>(k)];
    const int out = spec.layer_sizes[static_cast<std::size_t>(k) + 1];
    const Eigen::Index expected = static_cast<Eigen::Index>(out) * in + out;
    if (layer.values.size() != expected) {
        throw ConfigError("model: layer '" + layer.name + "' holds " +
                          std::to_string(layer.values.size()) + " values, spec expects " +
                          std::to_string(expected));
    }
    return LayerView{
        Eigen::Map<const Eigen::MatrixXd>(layer.values.data(), out, in),
        Eigen::Map<const Eigen::VectorXd>(layer.values.data() + static_cast<Eigen::Index>(out) * in,
                                          out),
    };
}

void check_model_against_spec(const MlpSpec& spec, const ModelParams& model) {
    const int layers = weight_layer_count(spec);
    if (static_cast<int>(model.layers.size()) != layers) {
        throw ConfigError("model: spec expects " + std::to_string(layers) + " weight layers, got " +
                          std::to_string(model.layers.size()));
    }
}

}  // namespace

ModelParams build_model(const MlpSpec& spec, std::uint64_t seed) {
    validate(spec);
    std::mt19937_64 gen(seed);
    ModelParams model;
    const int layers = weight_layer_count(spec);
    model.layers.reserve(static_cast<std::size_t>(layers));
    for (int k = 0; k < layers; ++k) {
        LayerParams layer;
        layer.layer_index = k;
        layer.name = "layer" + std::to_string(k);
        layer.values = init_flat_layer(spec.layer_sizes[static_cast<std::size_t>(k)],
                                       spec.layer_sizes[static_cast<std::size_t>(k) + 1], gen);
        model.layers.push_back(std::move(layer));
    }
    model.depth_norm = std::max(1, layers - 1);
    validate(model);
    return model;
}

Eigen::MatrixXd forward(const MlpSpec& spec, const ModelParams& model,
                        const Eigen::MatrixXd& inputs, ForwardCache* cache) {
    validate(spec);
    check_model_against_spec(spec, model);
    if (inputs.rows() != spec.layer_sizes.front()) {
        throw ConfigError("forward: inputs have " + std::to_string(inputs.rows()) +
                          " features, spec expects " + std::to_string(spec.layer_sizes.front()));
    }
    if (cache) {
        cache->activations.clear();
        cache->pre_activations.clear();
        cache->activations.push_back(inputs);
    }
    const int layers = weight_layer_count(spec);
    Eigen::MatrixXd a = inputs;
    for (int k = 0; k < layers; ++k) {
        const LayerView view = view_layer(spec, model.layers[static_cast<std::size_t>(k)], k);
        Eigen::MatrixXd z = (view.weights * a).colwise() + view.bias;
        if (!z.allFinite()) {
            throw NumericError("forward: non-finite pre-activation at layer '" +
                               model.layers[static_cast<std::size_t>(k)].name + "'");
        }
        if (k + 1 < layers) {
            if (spec.activation == Activation::tanh) {
                a = z.array().tanh();
            } else {
                a = z.cwiseMax(0.0);
            }
        } else {
            a = z;
        }
        if (cache) {
            cache->pre_activations.push_back(std::move(z));
            cache->activations.push_back(a);
        }
    }
    return a;
}

namespace {

void check_batch(const MlpSpec& spec, const Eigen::MatrixXd& outputs, const Batch& batch) {
    if (spec.loss == Loss::mse) {
        if (batch.targets.rows() != outputs.rows() || batch.targets.cols() != outputs.cols()) {
            throw ConfigError("loss: target shape " + std::to_string(batch.targets.rows()) + "x" +
                              std::to_string(batch.targets.cols()) + " does not match outputs " +
                              std::to_string(outputs.rows()) + "x" +
                              std::to_string(outputs.cols()));
        }
    } else {
        if (batch.labels.size() != outputs.cols()) {
            throw ConfigError("loss: got " + std::to_string(batch.labels.size()) +
                              " labels for " + std::to_string(outputs.cols()) + " samples");
        }
        for (Eigen::Index b = 0; b < batch.labels.size(); ++b) {
            if (batch.labels[b] < 0 || batch.labels[b] >= outputs.rows()) {
                throw ConfigError("loss: label " + std::to_string(batch.labels[b]) +
                                  " outside [0, " + std::to_string(outputs.rows()) + ")");
            }
        }
    }
    if (outputs.cols() == 0) {
        throw ConfigError("loss: empty batch");
    }
}

/// Stable per-column softmax pieces: shifted logits, their exps and sums.
struct SoftmaxParts {
    Eigen::MatrixXd shifted;
    Eigen::MatrixXd exps;
    Eigen::VectorXd sums;
};

SoftmaxParts softmax_parts(const Eigen::MatrixXd& outputs) {
    SoftmaxParts parts;
    const Eigen::VectorXd col_max = outputs.colwise().maxCoeff();
    parts.shifted = outputs.rowwise() - col_max.transpose();
    parts.exps = parts.shifted.array().exp().matrix();
    parts.sums = parts.exps.colwise().sum();
    return parts;
}

}  // namespace

double loss_value(const MlpSpec& spec, const Eigen::MatrixXd& outputs, const Batch& batch) {
    check_batch(spec, outputs, batch);
    const double batch_size = static_cast<double>(outputs.cols());
    if (spec.loss == Loss::mse) {
        return (outputs - batch.targets).squaredNorm() / batch_size;
    }
    const SoftmaxParts parts = softmax_parts(outputs);
    double total = 0.0;
    for (Eigen::Index b = 0; b < outputs.cols(); ++b) {
        total += std::log(parts.sums[b]) - parts.shifted(batch.labels[b], b);
    }
    return total / batch_size;
}

double accuracy(const Eigen::MatrixXd& outputs, const Eigen::VectorXi& labels) {
    if (labels.size() != outputs.cols()) {
        throw ConfigError("accuracy: got " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(outputs.cols()) + " samples");
    }
    if (outputs.cols() == 0) {
        throw ConfigError("accuracy: empty batch");
    }
    Eigen::Index hits = 0;
    for (Eigen::Index b = 0; b < outputs.cols(); ++b) {
        Eigen::Index best = 0;
        outputs.col(b).maxCoeff(&best);
        if (best == labels[b]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(outputs.cols());
}

BackwardResult backward(const MlpSpec& spec, const ModelParams& model, const ForwardCache& cache,
                        const Batch& batch) {
    validate(spec);
    check_model_against_spec(spec, model);
    const int layers = weight_layer_count(spec);
    if (cache.activations.size() != static_cast<std::size_t>(layers) + 1 ||
        cache.pre_activations.size() != static_cast<std::size_t>(layers)) {
        throw ConfigError("backward: forward cache does not match the model");
    }
    const Eigen::MatrixXd& outputs = cache.activations.back();
    check_batch(spec, outputs, batch);
    const double batch_size = static_cast<double>(outputs.cols());

    BackwardResult result;
    result.loss = loss_value(spec, outputs, batch);
    result.grads.resize(static_cast<std::size_t>(layers));

    Eigen::MatrixXd delta;  // dLoss/dZ at the current layer
    if (spec.loss == Loss::mse) {
        delta = 2.0 * (outputs - batch.targets) / batch_size;
    } else {
        const SoftmaxParts parts = softmax_parts(outputs);
        delta = parts.exps.array().rowwise() / parts.sums.transpose().array();
        for (Eigen::Index b = 0; b < outputs.cols(); ++b) {
            delta(batch.labels[b], b) -= 1.0;
        }
        delta /= batch_size;
    }

    for (int k = layers - 1; k >= 0; --k) {
        const LayerParams& layer = model.layers[static_cast<std::size_t>(k)];
        const LayerView view = view_layer(spec, layer, k);
        const Eigen::MatrixXd& below = cache.activations[static_cast<std::size_t>(k)];

        Eigen::VectorXd flat(layer.values.size());
        const Eigen::Index rows = view.weights.rows();
        const Eigen::Index cols = view.weights.cols();
        Eigen::Map<Eigen::MatrixXd>(flat.data(), rows, cols).noalias() = delta * below.transpose();
        Eigen::Map<Eigen::VectorXd>(flat.data() + rows * cols, rows) = delta.rowwise().sum();
        if (!flat.allFinite()) {
            throw NumericError("backward: non-finite gradient at layer '" + layer.name + "'");
        }
        result.grads[static_cast<std::size_t>(k)] = std::move(flat);

        if (k > 0) {
            const Eigen::MatrixXd upstream = view.weights.transpose() * delta;
            const Eigen::MatrixXd& z = cache.pre_activations[static_cast<std::size_t>(k) - 1];
            if (spec.activation == Activation::tanh) {
                const Eigen::MatrixXd& a = cache.activations[static_cast<std::size_t>(k)];
                delta = upstream.cwiseProduct(
                    (1.0 - a.array().square()).matrix());
            } else {
                delta = upstream.cwiseProduct(
                    (z.array() > 0.0).cast<double>().matrix());
            }
        }
    }
    return result;
}

double grad_check(const MlpSpec& spec, const ModelParams& model, const Batch& batch,
                  double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3], got " +
                          std::to_string(epsilon));
    }
    ForwardCache cache;
    forward(spec, model, batch.inputs, &cache);
    const BackwardResult analytic = backward(spec, model, cache, batch);

    ModelParams probe = model;
    double worst = 0.0;
    for (std::size_t k = 0; k < probe.layers.size(); ++k) {
        Eigen::VectorXd& values = probe.layers[k].values;
        for (Eigen::Index j = 0; j < values.size(); ++j) {
            const double original = values[j];
            values[j] = original + epsilon;
            const double loss_hi = loss_value(spec, forward(spec, probe, batch.inputs), batch);
            values[j] = original - epsilon;
            const double loss_lo = loss_value(spec, forward(spec, probe, batch.inputs), batch);
            values[j] = original;
            const double numeric = (loss_hi - loss_lo) / (2.0 * epsilon);
            const double exact = analytic.grads[k][j];
            // The unit floor keeps finite-difference noise on near-zero
            // gradient entries (saturated units) from dominating the report
            // while staying strict wherever gradients carry weight.
            const double denom = std::max({std::abs(numeric), std::abs(exact), 1.0});
            worst = std::max(worst, std::abs(numeric - exact) / denom);
        }
    }
    return worst;
}

ModelParams reinit_head(const MlpSpec& spec, const ModelParams& model, int new_output_size,
                        std::uint64_t seed) {
    validate(spec);
    check_model_against_spec(spec, model);
    if (new_output_size < 1) {
        throw ConfigError("reinit_head: output size must be >= 1, got " +
                          std::to_string(new_output_size));
    }
    ModelParams fresh = model;
    const int fan_in = spec.layer_sizes[spec.layer_sizes.size() - 2];
    std::mt19937_64 gen(seed);
    LayerParams& head = fresh.layers.back();
    head.values = init_flat_layer(fan_in, new_output_size, gen);
    head.pretrained.reset();
    return fresh;
}

std::vector<std::pair<std::string, MlpSpec>> shipped_model_specs() {
    return {
        {"logistic", {{2, 3}, Activation::tanh, Loss::softmax_cross_entropy}},
        {"linear-mse", {{2, 1}, Activation::tanh, Loss::mse}},
        {"tanh-2x16", {{2, 16, 16, 3}, Activation::tanh, Loss::softmax_cross_entropy}},
        {"relu-2x16", {{2, 16, 16, 3}, Activation::relu, Loss::softmax_cross_entropy}},
        {"tanh-3x32", {{2, 32, 32, 32, 3}, Activation::tanh, Loss::softmax_cross_entropy}},
        {"tanh-mse-deep", {{3, 8, 8, 1}, Activation::tanh, Loss::mse}},
    };
}

}  // namespace olor
