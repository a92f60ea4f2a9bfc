#include "cloudmark/tfp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"

namespace cloudmark {

using Eigen::VectorXd;

void ShapeOptConfig::validate() const {
  if (starts < 1) throw InvalidArgument("ShapeOptConfig: starts must be >= 1");
  if (iterations < 0) throw InvalidArgument("ShapeOptConfig: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("ShapeOptConfig: learning_rate must be > 0");
  if (decay_every < 1) throw InvalidArgument("ShapeOptConfig: decay_every must be >= 1");
}

void PointOptConfig::validate() const {
  if (!(eta >= 0.0)) throw InvalidArgument("PointOptConfig: eta must be >= 0");
  if (iterations < 0) throw InvalidArgument("PointOptConfig: iterations must be >= 0");
  if (!(step > 0.0)) throw InvalidArgument("PointOptConfig: step must be > 0");
  if (!(momentum >= 0.0)) throw InvalidArgument("PointOptConfig: momentum must be >= 0");
}

Eigen::VectorXd TargetFeatureSet::mean() const {
  validate();
  VectorXd m = VectorXd::Zero(features.front().size());
  for (const auto& f : features) m += f;
  return m / static_cast<double>(features.size());
}

void TargetFeatureSet::validate() const {
  if (features.empty()) throw InvalidArgument("target feature set is empty");
  for (const auto& f : features)
    if (f.size() != features.front().size()) throw InvalidArgument("target features have mixed dimensions");
}

TargetFeatureSet compute_target_features(const Surrogate& net, const std::vector<PointCloud>& clouds,
                                         std::vector<std::size_t> source_indices) {
  TargetFeatureSet t;
  for (const auto& c : clouds) t.features.push_back(forward(net.params, net.config, c).features);
  t.source_indices = std::move(source_indices);
  return t;
}

FeatureLoss mean_target_distance(const Eigen::VectorXd& features, const TargetFeatureSet& targets) {
  targets.validate();
  if (features.size() != targets.features.front().size())
    throw InvalidArgument("feature dimension does not match target features");
  FeatureLoss out{0.0, VectorXd::Zero(features.size())};
  for (const auto& t : targets.features) {
    const VectorXd diff = features - t;
    const double d = diff.norm();
    out.value += d;
    if (d > 0.0) out.grad += diff / d;
  }
  const double inv = 1.0 / static_cast<double>(targets.features.size());
  out.value *= inv;
  out.grad *= inv;
  return out;
}

double shape_loss(const PointCloud& source, const EulerAngles& theta, const TargetFeatureSet& targets,
                  const Surrogate& net) {
  targets.validate();
  const PointCloud rotated = rotate_cloud(source, theta);
  return mean_target_distance(forward(net.params, net.config, rotated).features, targets).value;
}

AngleGradient shape_loss_gradient(const PointCloud& source, const EulerAngles& theta, const FeatureLossFn& tail,
                                  const Surrogate& net) {
  const Rotation rot = euler_rotation(theta);
  const Eigen::RowVector3d c = source.points().colwise().mean();
  const PointMatrix centered = source.points().rowwise() - c;
  PointMatrix rotated = centered * rot.matrix;
  rotated.rowwise() += c;
  const InputGradient g = grad_input(net.params, net.config, tail, PointCloud(std::move(rotated)));
  AngleGradient out;
  out.value = g.value;
  for (int k = 0; k < 3; ++k) out.grad[static_cast<std::size_t>(k)] = (g.grad.cwiseProduct(centered * rot.d_angles[static_cast<std::size_t>(k)])).sum();
  return out;
}

ShapeOptResult search_rotation(const PointCloud& source, const FeatureLossFn& tail, const Surrogate& net,
                               const AngleSearch& search, double sign) {
  if (search.starts < 1) throw InvalidArgument("rotation search needs at least one start");
  if (search.iterations < 0) throw InvalidArgument("rotation search iterations must be >= 0");
  // The search always minimizes `sign * tail`; reported losses are in tail units.
  auto objective = [&](const EulerAngles& th) {
    return sign * tail(forward(net.params, net.config, rotate_cloud(source, th)).features).value;
  };

  ShapeOptResult r;
  Rng rng(search.seed);
  std::uniform_real_distribution<double> angle(search.start_low, search.start_high);
  EulerAngles best_start{};
  double best_start_obj = std::numeric_limits<double>::infinity();
  for (int i = 0; i < search.starts; ++i) {
    EulerAngles th{};
    if (search.random_starts) {
      th.psi = angle(rng);
      th.phi = angle(rng);
      th.gamma = angle(rng);
    }
    const double obj = objective(th);
    r.start_losses.push_back(sign * obj);
    if (obj < best_start_obj) {
      best_start_obj = obj;
      best_start = th;
    }
  }

  std::array<double, 3> theta = best_start.as_array();
  std::array<double, 3> m1{}, m2{};
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  EulerAngles best = best_start;
  double best_obj = best_start_obj;
  r.trace.push_back(sign * best_start_obj);
  for (int t = 1; t <= search.iterations; ++t) {
    const AngleGradient g = shape_loss_gradient(source, EulerAngles::from_array(theta), tail, net);
    const double lr = search.learning_rate * std::pow(0.1, static_cast<double>((t - 1) / search.decay_every));
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < 3; ++k) {
      const double gk = sign * g.grad[k];
      m1[k] = b1 * m1[k] + (1.0 - b1) * gk;
      m2[k] = b2 * m2[k] + (1.0 - b2) * gk * gk;
      theta[k] -= lr * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + eps);
    }
    const EulerAngles current = EulerAngles::from_array(theta);
    const double obj = objective(current);
    r.trace.push_back(sign * obj);
    if (obj < best_obj) {
      best_obj = obj;
      best = current;
    }
  }
  r.theta = best;
  r.rotated = rotate_cloud(source, best);
  r.start_loss = sign * best_start_obj;
  r.final_loss = sign * best_obj;
  return r;
}

ShapeOptResult optimize_shape(const PointCloud& source, const TargetFeatureSet& targets, const Surrogate& net,
                              const ShapeOptConfig& cfg) {
  cfg.validate();
  targets.validate();
  const FeatureLossFn tail = [&targets](const VectorXd& f) { return mean_target_distance(f, targets); };
  AngleSearch s;
  s.starts = cfg.starts;
  s.iterations = cfg.iterations;
  s.learning_rate = cfg.learning_rate;
  s.decay_every = cfg.decay_every;
  s.seed = cfg.seed;
  return search_rotation(source, tail, net, s, 1.0);
}

double point_loss(const PointCloud& rotated, const PointMatrix& delta, const TargetFeatureSet& targets,
                  const Surrogate& net, double eta) {
  if (delta.rows() != rotated.points().rows())
    throw InvalidArgument("point_loss: delta has " + std::to_string(delta.rows()) + " rows, cloud has " +
                          std::to_string(rotated.size()));
  targets.validate();
  const PointCloud moved(rotated.points() + delta);
  return mean_target_distance(forward(net.params, net.config, moved).features, targets).value + eta * delta.norm();
}

PointOptResult optimize_point(const PointCloud& rotated, const TargetFeatureSet& targets, const Surrogate& net,
                              const PointOptConfig& cfg) {
  cfg.validate();
  targets.validate();
  const FeatureLossFn tail = [&targets](const VectorXd& f) { return mean_target_distance(f, targets); };
  PointMatrix delta = PointMatrix::Zero(rotated.points().rows(), 3);
  PointMatrix momentum = PointMatrix::Zero(rotated.points().rows(), 3);
  PointOptResult r;
  for (int t = 1; t <= cfg.iterations; ++t) {
    const InputGradient g = grad_input(net.params, net.config, tail, PointCloud(rotated.points() + delta));
    const double dn = delta.norm();
    r.trace.push_back(g.value + cfg.eta * dn);
    PointMatrix grad = g.grad;
    if (dn > 0.0) grad += (cfg.eta / dn) * delta;
    const double gn = grad.norm();
    // A vanishing gradient contributes nothing rather than dividing by zero.
    if (gn >= 1e-12) momentum += (cfg.momentum / gn) * grad;
    delta -= cfg.step * momentum;
  }
  r.trace.push_back(point_loss(rotated, delta, targets, net, cfg.eta));
  r.perturbed = PointCloud(rotated.points() + delta);
  r.delta = std::move(delta);
  return r;
}

PerturbResult perturb(const PointCloud& source, const TargetFeatureSet& targets, const Surrogate& net,
                      const ShapeOptConfig& shape_cfg, const PointOptConfig& point_cfg,
                      const PerturbOptions& options) {
  PerturbResult out;
  PerturbationRecord& rec = out.record;
  PointCloud rotated = source;
  if (options.shape_wise) {
    const ShapeOptResult s = optimize_shape(source, targets, net, shape_cfg);
    rotated = s.rotated;
    rec.theta = s.theta;
    rec.shape_loss_start = s.start_loss;
    rec.shape_loss_final = s.final_loss;
  } else {
    rec.shape_loss_start = rec.shape_loss_final = shape_loss(source, EulerAngles{}, targets, net);
  }
  if (options.point_wise) {
    PointOptResult p = optimize_point(rotated, targets, net, point_cfg);
    rec.delta_norm = p.delta.norm();
    rec.point_loss_final = p.trace.back();
    out.perturbed = std::move(p.perturbed);
  } else {
    rec.point_loss_final = rec.shape_loss_final;
    out.perturbed = rotated;
  }
  rec.chamfer_rotation = chamfer_distance(source, rotated);
  rec.chamfer_jitter = chamfer_distance(rotated, out.perturbed);
  rec.chamfer_total = chamfer_distance(source, out.perturbed);
  return out;
}

double relative_distance(const std::vector<PointCloud>& samples, const TargetFeatureSet& targets,
                         const Surrogate& net) {
  if (samples.empty()) throw InvalidArgument("relative_distance: no samples");
  const VectorXd centre = targets.mean();
  const double denom = centre.norm();
  if (!(denom > 0.0)) throw DegenerateInput("relative_distance: target feature mean has zero norm");
  VectorXd mean = VectorXd::Zero(centre.size());
  for (const auto& s : samples) mean += forward(net.params, net.config, s).features;
  mean /= static_cast<double>(samples.size());
  return (mean - centre).norm() / denom;
}

double relative_distance(const PointCloud& sample, const TargetFeatureSet& targets, const Surrogate& net) {
  return relative_distance(std::vector<PointCloud>{sample}, targets, net);
}

}  // namespace cloudmark
