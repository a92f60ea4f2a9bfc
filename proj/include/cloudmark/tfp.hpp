#pragma once

// Transferable feature perturbation: a rotation search (shape-wise step)
// followed by a momentum-normalized additive jitter (point-wise step), both
// pulling a source cloud toward a set of target-class features.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "cloudmark/geometry.hpp"
#include "cloudmark/net.hpp"

namespace cloudmark {

/// Surrogate network used as the feature extractor.
struct Surrogate {
  const NetConfig& config;
  const NetParams& params;
};

struct ShapeOptConfig {
  int starts = 30;                 // random starting angles
  int iterations = 30;
  double learning_rate = 0.025;    // Adam, divided by 10 every `decay_every` steps
  int decay_every = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PointOptConfig {
  double eta = 50.0;        // weight of the ||delta||_2 regularizer
  int iterations = 20;
  double step = 0.0025;     // beta
  double momentum = 1.0;    // mu
  std::uint64_t seed = 1;

  void validate() const;
};

/// Cached target-class features; treated as constants by both objectives.
struct TargetFeatureSet {
  std::vector<Eigen::VectorXd> features;
  std::vector<std::size_t> source_indices;

  int dim() const { return features.empty() ? 0 : static_cast<int>(features.front().size()); }
  Eigen::VectorXd mean() const;
  void validate() const;
};

TargetFeatureSet compute_target_features(const Surrogate& net, const std::vector<PointCloud>& clouds,
                                         std::vector<std::size_t> source_indices = {});

/// Mean Euclidean feature distance to the targets, with its gradient.
FeatureLoss mean_target_distance(const Eigen::VectorXd& features, const TargetFeatureSet& targets);

double shape_loss(const PointCloud& source, const EulerAngles& theta, const TargetFeatureSet& targets,
                  const Surrogate& net);

struct ShapeOptResult {
  EulerAngles theta;              // best iterate seen
  PointCloud rotated;
  double start_loss = 0.0;        // at the selected starting point
  double final_loss = 0.0;        // at `theta`
  std::vector<double> start_losses;
  std::vector<double> trace;      // loss at each descent iterate, [0] = start
};

/// Loss value and gradient with respect to the three angles.
struct AngleGradient {
  double value = 0.0;
  std::array<double, 3> grad{};
};
AngleGradient shape_loss_gradient(const PointCloud& source, const EulerAngles& theta, const FeatureLossFn& tail,
                                  const Surrogate& net);

ShapeOptResult optimize_shape(const PointCloud& source, const TargetFeatureSet& targets, const Surrogate& net,
                              const ShapeOptConfig& cfg);

/// Angle search shared by the shape-wise step and the adaptive removal attack.
/// `sign` = +1 minimizes `tail`, -1 maximizes it. Returns the best iterate.
struct AngleSearch {
  int starts = 1;
  int iterations = 0;
  double learning_rate = 0.025;
  int decay_every = 10;
  std::uint64_t seed = 1;
  bool random_starts = true;      // false: the single start is theta = 0
  double start_low = 0.0;         // sampling range of the random starts
  double start_high = 6.283185307179586;
};
ShapeOptResult search_rotation(const PointCloud& source, const FeatureLossFn& tail, const Surrogate& net,
                               const AngleSearch& search, double sign);

double point_loss(const PointCloud& rotated, const PointMatrix& delta, const TargetFeatureSet& targets,
                  const Surrogate& net, double eta);

struct PointOptResult {
  PointCloud perturbed;
  PointMatrix delta;
  std::vector<double> trace;  // L_p at each iterate, [0] = delta 0
};

PointOptResult optimize_point(const PointCloud& rotated, const TargetFeatureSet& targets, const Surrogate& net,
                              const PointOptConfig& cfg);

/// Persisted summary of one perturbation.
struct PerturbationRecord {
  EulerAngles theta;
  double delta_norm = 0.0;
  double shape_loss_start = 0.0;
  double shape_loss_final = 0.0;
  double point_loss_final = 0.0;
  double chamfer_rotation = 0.0;  // source vs rotated
  double chamfer_jitter = 0.0;    // rotated vs perturbed
  double chamfer_total = 0.0;     // source vs perturbed

  bool operator==(const PerturbationRecord&) const = default;
};

struct PerturbOptions {
  bool shape_wise = true;
  bool point_wise = true;
};

struct PerturbResult {
  PointCloud perturbed;
  PerturbationRecord record;
};

PerturbResult perturb(const PointCloud& source, const TargetFeatureSet& targets, const Surrogate& net,
                      const ShapeOptConfig& shape_cfg, const PointOptConfig& point_cfg,
                      const PerturbOptions& options = {});

/// ||mean g_f(samples) - mean target feature|| / ||mean target feature||.
double relative_distance(const std::vector<PointCloud>& samples, const TargetFeatureSet& targets,
                         const Surrogate& net);
double relative_distance(const PointCloud& sample, const TargetFeatureSet& targets, const Surrogate& net);

}  // namespace cloudmark
