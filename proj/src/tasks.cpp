#include "olor/tasks.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "olor/csv.hpp"
#include "olor/errors.hpp"
#include "olor/rng.hpp"

namespace olor {

namespace {

constexpr double kClusterRadius = 3.0;
constexpr double kClusterSigma = 0.5;
constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kLabelPermSalt = 0x9E3779B97F4A7C15ull;

}  // namespace

const char* to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::gaussian_clusters: return "gaussian-clusters";
        case TaskKind::rotated_clusters: return "rotated-clusters";
        case TaskKind::label_remap: return "label-remap";
    }
    return "?";
}

void validate(const TaskSpec& spec) {
    if (spec.num_classes < 2) {
        throw ConfigError("task: num_classes must be >= 2, got " +
                          std::to_string(spec.num_classes));
    }
    if (spec.dim < 2) {
        throw ConfigError("task: dim must be >= 2 (cluster means live in the first two "
                          "dimensions), got " + std::to_string(spec.dim));
    }
    if (spec.samples_per_class < 10) {
        throw ConfigError("task: samples_per_class must be >= 10 for a stratified split, got " +
                          std::to_string(spec.samples_per_class));
    }
    if (!(spec.rotation >= 0.0 && spec.rotation <= kPi)) {
        throw ConfigError("task: rotation must lie in [0, pi], got " +
                          std::to_string(spec.rotation));
    }
    if (!std::isfinite(spec.offset)) {
        throw ConfigError("task: offset must be finite");
    }
}

Eigen::MatrixXd cluster_means(const TaskSpec& spec) {
    validate(spec);
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(spec.dim, spec.num_classes);
    for (int c = 0; c < spec.num_classes; ++c) {
        const double angle = 2.0 * kPi * static_cast<double>(c) /
                             static_cast<double>(spec.num_classes);
        means(0, c) = kClusterRadius * std::cos(angle);
        means(1, c) = kClusterRadius * std::sin(angle);
    }
    if (spec.rotation != 0.0) {
        const double cr = std::cos(spec.rotation);
        const double sr = std::sin(spec.rotation);
        for (int c = 0; c < spec.num_classes; ++c) {
            const double x = means(0, c);
            const double y = means(1, c);
            means(0, c) = cr * x - sr * y;
            means(1, c) = sr * x + cr * y;
        }
    }
    if (spec.offset != 0.0) {
        means.row(0).array() += spec.offset;
    }
    return means;
}

Dataset generate(const TaskSpec& spec) {
    validate(spec);
    const Eigen::MatrixXd means = cluster_means(spec);

    // Label permutation for the remap task; identity otherwise.
    std::vector<int> label_of(static_cast<std::size_t>(spec.num_classes));
    std::iota(label_of.begin(), label_of.end(), 0);
    if (spec.kind == TaskKind::label_remap) {
        std::mt19937_64 perm_gen(spec.seed ^ kLabelPermSalt);
        rng::shuffle(label_of, perm_gen);
    }

    std::mt19937_64 gen(spec.seed);
    const int per_class = spec.samples_per_class;
    const int train_per_class = (per_class * 4) / 5;
    const int valid_per_class = per_class - train_per_class;

    Dataset data;
    data.train_inputs.resize(spec.dim, static_cast<Eigen::Index>(train_per_class) * spec.num_classes);
    data.train_labels.resize(static_cast<Eigen::Index>(train_per_class) * spec.num_classes);
    data.valid_inputs.resize(spec.dim, static_cast<Eigen::Index>(valid_per_class) * spec.num_classes);
    data.valid_labels.resize(static_cast<Eigen::Index>(valid_per_class) * spec.num_classes);

    Eigen::Index train_at = 0;
    Eigen::Index valid_at = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            Eigen::VectorXd x(spec.dim);
            for (int f = 0; f < spec.dim; ++f) {
                x[f] = means(f, c) + kClusterSigma * rng::normal(gen);
            }
            if (s < train_per_class) {
                data.train_inputs.col(train_at) = x;
                data.train_labels[train_at] = label_of[static_cast<std::size_t>(c)];
                ++train_at;
            } else {
                data.valid_inputs.col(valid_at) = x;
                data.valid_labels[valid_at] = label_of[static_cast<std::size_t>(c)];
                ++valid_at;
            }
        }
    }

    // Standardize with train-split statistics; degenerate scales fall back
    // to 1 so constant features pass through unchanged.
    data.feature_mean = data.train_inputs.rowwise().mean();
    data.feature_scale.resize(spec.dim);
    const double n_train = static_cast<double>(data.train_inputs.cols());
    for (int f = 0; f < spec.dim; ++f) {
        const double mean = data.feature_mean[f];
        const double var =
            (data.train_inputs.row(f).array() - mean).square().sum() / n_train;
        const double scale = std::sqrt(var);
        data.feature_scale[f] = (scale < 1e-12) ? 1.0 : scale;
    }
    for (int f = 0; f < spec.dim; ++f) {
        data.train_inputs.row(f) =
            (data.train_inputs.row(f).array() - data.feature_mean[f]) / data.feature_scale[f];
        data.valid_inputs.row(f) =
            (data.valid_inputs.row(f).array() - data.feature_mean[f]) / data.feature_scale[f];
    }
    return data;
}

TaskSpec derive_downstream(const TaskSpec& upstream, double rotation, double offset,
                           bool remap_labels, std::uint64_t seed) {
    validate(upstream);
    TaskSpec downstream = upstream;
    downstream.kind = remap_labels ? TaskKind::label_remap : TaskKind::rotated_clusters;
    downstream.rotation = rotation;
    downstream.offset = offset;
    downstream.seed = seed;
    validate(downstream);
    return downstream;
}

void export_csv(const std::string& path, const Eigen::MatrixXd& inputs,
                const Eigen::VectorXi& labels) {
    if (labels.size() != inputs.cols()) {
        throw ConfigError("export: got " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(inputs.cols()) + " samples");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("export: cannot open '" + path + "' for writing");
    }
    for (Eigen::Index f = 0; f < inputs.rows(); ++f) {
        out << "feature_" << f << ',';
    }
    out << "label\n";
    for (Eigen::Index b = 0; b < inputs.cols(); ++b) {
        for (Eigen::Index f = 0; f < inputs.rows(); ++f) {
            out << format_double(inputs(f, b)) << ',';
        }
        out << labels[b] << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("export: write to '" + path + "' failed");
    }
}

}  // namespace olor
