#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace olor {

enum class TaskKind { gaussian_clusters, rotated_clusters, label_remap };

const char* to_string(TaskKind kind);

/// Synthetic classification task: isotropic Gaussian clusters whose means sit
/// on a circle in the first two feature dimensions.  `rotation` turns that
/// circle, `offset` shifts it along the first axis; both default to zero so a
/// derived task with no shift draws from the same distribution family.
struct TaskSpec {
    TaskKind kind = TaskKind::gaussian_clusters;
    int num_classes = 3;
    int dim = 2;
    int samples_per_class = 100;
    double rotation = 0.0;  // radians in [0, pi]
    double offset = 0.0;
    std::uint64_t seed = 1;
};

void validate(const TaskSpec& spec);

/// Cluster means after rotation and offset, one column per class.
Eigen::MatrixXd cluster_means(const TaskSpec& spec);

/// Stratified 80/20 train/validation split, standardized per feature with
/// statistics computed on the train split.  Columns are samples.
struct Dataset {
    Eigen::MatrixXd train_inputs;
    Eigen::VectorXi train_labels;
    Eigen::MatrixXd valid_inputs;
    Eigen::VectorXi valid_labels;
    Eigen::VectorXd feature_mean;   // train-split statistics used to scale
    Eigen::VectorXd feature_scale;
};

/// Deterministic generation: equal specs yield bit-identical datasets.
Dataset generate(const TaskSpec& spec);

/// Downstream task sharing the upstream class structure.  With
/// remap_labels the features keep the upstream cluster placement and only
/// the class labels are permuted.
TaskSpec derive_downstream(const TaskSpec& upstream, double rotation, double offset,
                           bool remap_labels, std::uint64_t seed);

/// Writes "feature_0,...,feature_{d-1},label" rows for external inspection.
void export_csv(const std::string& path, const Eigen::MatrixXd& inputs,
                const Eigen::VectorXi& labels);

}  // namespace olor
