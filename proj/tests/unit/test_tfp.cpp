#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "cloudmark/dataset.hpp"
#include "cloudmark/error.hpp"
#include "cloudmark/tfp.hpp"

using namespace cloudmark;

namespace {

struct Fixture {
  Dataset data;
  NetConfig cfg = NetConfig::mini(3, 5);
  NetParams params = init_params(cfg);
  Surrogate net{cfg, params};
  TargetFeatureSet targets;

  Fixture() {
    SyntheticShapeSpec s;
    s.classes = 3;
    s.points = 96;
    s.samples_per_class = 12;
    s.seed = 2;
    data = generate_synthetic_dataset(s);
    std::vector<PointCloud> target_clouds;
    for (const Sample& x : data.samples)
      if (x.label == 1 && target_clouds.size() < 6) target_clouds.push_back(x.cloud);
    targets = compute_target_features(net, target_clouds);
  }
  const PointCloud& source(int i = 0) const {
    for (const Sample& x : data.samples)
      if (x.label == 0 && i-- == 0) return x.cloud;
    throw std::logic_error("no source");
  }
};

double mean_distance(const Eigen::VectorXd& f, const TargetFeatureSet& t) {
  double s = 0.0;
  for (const auto& g : t.features) s += (f - g).norm();
  return s / static_cast<double>(t.features.size());
}

}  // namespace

TEST_CASE("shape loss composition") {
  Fixture fx;
  const PointCloud& x = fx.source();
  EulerAngles th{0.4, -1.1, 2.0};

  TargetFeatureSet single = compute_target_features(fx.net, {rotate_cloud(x, th)});
  CHECK(shape_loss(x, th, single, fx.net) == 0.0);

  const double at_zero = mean_distance(forward(fx.params, fx.cfg, x).features, fx.targets);
  CHECK(std::abs(shape_loss(x, EulerAngles{}, fx.targets, fx.net) - at_zero) < 1e-12);

  const double direct = mean_distance(forward(fx.params, fx.cfg, rotate_cloud(x, th)).features, fx.targets);
  CHECK(std::abs(shape_loss(x, th, fx.targets, fx.net) - direct) < 1e-12);

  CHECK_THROWS_AS(shape_loss(x, th, TargetFeatureSet{}, fx.net), InvalidArgument);
}

TEST_CASE("angle gradient matches central differences") {
  Fixture fx;
  FeatureLossFn tail = [&](const Eigen::VectorXd& f) { return mean_target_distance(f, fx.targets); };
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 2 * std::numbers::pi);
  const double h = 1e-5;
  int bad = 0, probes = 0;
  for (int s = 0; s < 12; ++s) {
    const PointCloud& x = fx.source(s % 4);
    EulerAngles th{u(rng), u(rng), u(rng)};
    AngleGradient g = shape_loss_gradient(x, th, tail, fx.net);
    CHECK(std::abs(g.value - shape_loss(x, th, fx.targets, fx.net)) < 1e-12);
    for (int a = 0; a < 3; ++a) {
      auto p = th.as_array(), m = th.as_array();
      p[a] += h;
      m[a] -= h;
      const double fd = (shape_loss(x, EulerAngles::from_array(p), fx.targets, fx.net) -
                         shape_loss(x, EulerAngles::from_array(m), fx.targets, fx.net)) / (2 * h);
      ++probes;
      if (std::abs(fd - g.grad[a]) > 1e-4 * std::max(std::abs(fd), std::abs(g.grad[a])) + 1e-9) ++bad;
    }
  }
  CHECK(probes == 36);
  CHECK(bad == 0);
}

TEST_CASE("shape search with one start and no steps") {
  Fixture fx;
  ShapeOptConfig c;
  c.starts = 1;
  c.iterations = 0;
  c.seed = 77;
  ShapeOptResult r = optimize_shape(fx.source(), fx.targets, fx.net, c);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 2 * std::numbers::pi);
  const double psi = u(rng), phi = u(rng), gamma = u(rng);
  CHECK(r.theta.psi == psi);
  CHECK(r.theta.phi == phi);
  CHECK(r.theta.gamma == gamma);
  CHECK(r.rotated == rotate_cloud(fx.source(), r.theta));
  CHECK(r.trace.size() == 1);
}

TEST_CASE("shape search returns the best iterate seen") {
  Fixture fx;
  ShapeOptConfig c;
  c.starts = 4;
  c.iterations = 15;
  ShapeOptResult r = optimize_shape(fx.source(), fx.targets, fx.net, c);
  for (double v : r.trace) CHECK(r.final_loss <= v);
  for (double v : r.start_losses) CHECK(r.start_loss <= v);
  CHECK(std::abs(r.final_loss - shape_loss(fx.source(), r.theta, fx.targets, fx.net)) < 1e-12);
}

TEST_CASE("point loss") {
  Fixture fx;
  const PointCloud& x = fx.source();
  PointMatrix zero = PointMatrix::Zero(x.size(), 3);
  CHECK(std::abs(point_loss(x, zero, fx.targets, fx.net, 50.0) - shape_loss(x, EulerAngles{}, fx.targets, fx.net)) <
        1e-12);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.01);
  PointMatrix d(x.size(), 3);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = n(rng);
  const double direct = mean_distance(forward(fx.params, fx.cfg, PointCloud(x.points() + d)).features, fx.targets);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) sq += d.data()[i] * d.data()[i];
  CHECK(std::abs(point_loss(x, d, fx.targets, fx.net, 10.0) - (direct + 10.0 * std::sqrt(sq))) < 1e-12);

  // Constant-feature net isolates the regularizer.
  NetParams flat = fx.params.zeros_like();
  Surrogate dead{fx.cfg, flat};
  TargetFeatureSet t = compute_target_features(fx.net, {fx.source(1)});
  CHECK(std::abs(point_loss(x, d, t, dead, 7.0) - point_loss(x, zero, t, dead, 7.0) - 7.0 * std::sqrt(sq)) < 1e-12);

  CHECK_THROWS_AS(point_loss(x, PointMatrix::Zero(3, 3), fx.targets, fx.net, 1.0), InvalidArgument);
}

TEST_CASE("point search edge cases") {
  Fixture fx;
  const PointCloud& x = fx.source();
  PointOptConfig c;
  c.iterations = 0;
  PointOptResult r0 = optimize_point(x, fx.targets, fx.net, c);
  CHECK(r0.perturbed == x);
  CHECK(r0.delta.isZero(0));

  c.iterations = 1;
  c.momentum = 1.0;
  c.step = 0.0025;
  PointOptResult r1 = optimize_point(x, fx.targets, fx.net, c);
  CHECK(std::abs(r1.delta.norm() - 0.0025) < 1e-15);
}

TEST_CASE("larger eta keeps the jitter smaller on average") {
  // Needs a net whose feature gradient competes with the regularizer; at
  // random init the regularizer dominates every eta and the step sizes match.
  Fixture fx;
  TrainConfig t;
  t.epochs = 15;
  NetParams trained = train_classifier(fx.cfg, fx.data.labeled(Split::Train), t).params;
  Surrogate net{fx.cfg, trained};
  std::vector<PointCloud> target_clouds;
  for (const Sample& x : fx.data.samples)
    if (x.label == 1 && target_clouds.size() < 6) target_clouds.push_back(x.cloud);
  TargetFeatureSet targets = compute_target_features(net, target_clouds);
  std::vector<double> mean;
  for (double eta : {10.0, 50.0, 250.0}) {
    PointOptConfig c;
    c.eta = eta;
    double sum = 0.0;
    for (int i = 0; i < 8; ++i) {
      const PointCloud& x = fx.source(i);
      sum += chamfer_distance(x, optimize_point(x, targets, net, c).perturbed);
    }
    mean.push_back(sum / 8);
  }
  CHECK(mean[1] <= mean[0]);
  CHECK(mean[2] <= mean[1]);
}

TEST_CASE("perturb without iterations is a pure rotation") {
  Fixture fx;
  ShapeOptConfig s;
  s.starts = 1;
  s.iterations = 0;
  PointOptConfig p;
  p.iterations = 0;
  PerturbResult r = perturb(fx.source(), fx.targets, fx.net, s, p);
  CHECK(r.perturbed == rotate_cloud(fx.source(), r.record.theta));
  CHECK(r.record.delta_norm == 0.0);
  CHECK(r.record.chamfer_jitter == 0.0);
}

TEST_CASE("relative distance") {
  Fixture fx;
  TargetFeatureSet sole = compute_target_features(fx.net, {fx.source(3)});
  CHECK(relative_distance(fx.source(3), sole, fx.net) == 0.0);

  NetParams flat = fx.params.zeros_like();
  Surrogate dead{fx.cfg, flat};
  TargetFeatureSet t;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(fx.cfg.feature_dim());
  f[0] = 3;
  f[1] = 4;
  t.features = {f};
  CHECK(relative_distance(fx.source(), t, dead) == 1.0);

  std::vector<PointCloud> batch{fx.source(0), fx.source(1), fx.source(2)};
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(fx.cfg.feature_dim()), centre = mean;
  for (const auto& b : batch) mean += forward(fx.params, fx.cfg, b).features / 3.0;
  for (const auto& g : fx.targets.features) centre += g / static_cast<double>(fx.targets.features.size());
  CHECK(std::abs(relative_distance(batch, fx.targets, fx.net) - (mean - centre).norm() / centre.norm()) < 1e-12);

  TargetFeatureSet zero;
  zero.features = {Eigen::VectorXd::Zero(fx.cfg.feature_dim())};
  CHECK_THROWS_AS(relative_distance(fx.source(), zero, fx.net), DegenerateInput);
}
