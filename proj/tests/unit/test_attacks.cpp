#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cloudmark/attacks.hpp"
#include "cloudmark/dataset.hpp"
#include "cloudmark/error.hpp"

using namespace cloudmark;

namespace {

PointCloud random_cloud(int n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, scale);
  PointMatrix p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) p(i, j) = u(rng);
  return PointCloud(p);
}

// Two-sample Kolmogorov-Smirnov p-value, asymptotic series.
double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2 * ((k % 2) ? 1 : -1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

struct SorOracle {
  std::vector<std::size_t> removed;
};

SorOracle brute_sor(const PointCloud& x, std::size_t k, double mult) {
  const std::size_t n = x.size();
  std::vector<double> md(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.push_back((x.point(i) - x.point(j)).norm());
    std::sort(d.begin(), d.end());
    double s = 0.0;
    for (std::size_t q = 0; q < k; ++q) s += d[q];
    md[i] = s / k;
  }
  double mean = 0.0;
  for (double v : md) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : md) var += (v - mean) * (v - mean);
  const double thr = mean + mult * std::sqrt(var / n);
  SorOracle o;
  for (std::size_t i = 0; i < n; ++i)
    if (md[i] > thr) o.removed.push_back(i);
  return o;
}

std::vector<LabeledCloud> small_train(std::uint64_t seed) {
  SyntheticShapeSpec s;
  s.classes = 2;
  s.points = 64;
  s.samples_per_class = 12;
  s.seed = seed;
  return generate_synthetic_dataset(s).labeled(Split::Train);
}

NetConfig small_net() {
  NetConfig c;
  c.per_point_widths = {16, 32};
  c.head_widths = {16};
  c.class_count = 2;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("rotation augmentation") {
  PointCloud x = random_cloud(30, 1);
  PointCloud a = augment_rotation(x, 42), b = augment_rotation(x, 42);
  CHECK(a == b);
  CHECK_FALSE(a == augment_rotation(x, 43));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j)
      worst = std::max(worst, std::abs((x.point(i) - x.point(j)).norm() - (a.point(i) - a.point(j)).norm()));
  CHECK(worst < 1e-12);
}

TEST_CASE("rotation augmentation draws uniform angles") {
  // Recover S from a unit-frame probe: row i of S is y_{i+1} - y_0.
  PointCloud probe = PointCloud::from_points({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  const int n = 10000;
  std::array<std::vector<double>, 3> got, ref;
  for (int t = 0; t < n; ++t) {
    PointCloud y = augment_rotation(probe, 1000 + t);
    Mat3 s;
    for (int r = 0; r < 3; ++r) s.row(r) = (y.point(r + 1) - y.point(0)).transpose();
    Mat3 e = euler_rotation_matrix({u(rng), u(rng), u(rng)});
    for (int k = 0; k < 3; ++k) {
      got[k].push_back(s(k, k));
      ref[k].push_back(e(k, k));
    }
  }
  for (int k = 0; k < 3; ++k) CHECK(ks_two_sample(got[k], ref[k]) > 0.01);
}

TEST_CASE("noise augmentation") {
  PointCloud x = random_cloud(34000, 2);
  CHECK(augment_noise(x, 0.0, 1) == x);
  const double sigma = 0.02;
  PointCloud y = augment_noise(x, sigma, 5);
  CHECK(y.size() == x.size());
  PointMatrix d = y.points() - x.points();
  const double mean = d.mean();
  const double var = (d.array() - mean).square().sum() / (d.size() - 1);
  CHECK(std::abs(var - sigma * sigma) < 0.05 * sigma * sigma);
}

TEST_CASE("statistical outlier removal") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 0.01);
  std::vector<Vec3> pts;
  for (int i = 0; i < 60; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  pts.emplace_back(1.0, 1.0, 1.0);
  PointCloud x = PointCloud::from_points(pts);
  SorResult r = sor_filter(x, 20, 2.0);
  REQUIRE(r.removed.size() == 1);
  CHECK(r.removed[0] == 60);
  CHECK(r.kept.size() == 60);
  CHECK(sor_filter(x, 20, 1e9).removed.empty());

  for (double mult : {0.5, 1.0, 1.5, 2.0}) {
    PointCloud c = random_cloud(150, 7);
    CHECK(sor_filter(c, 20, mult).removed == brute_sor(c, 20, mult).removed);
  }
  CHECK_THROWS_AS(sor_filter(random_cloud(20, 1), 20, 1.0), InvalidArgument);
}

TEST_CASE("fine-tuning") {
  NetConfig c = small_net();
  auto data = small_train(2);
  TrainConfig t;
  t.epochs = 3;
  NetParams p = train_classifier(c, data, t).params;
  CHECK(finetune(p, c, data, 0.2, 0, t, 1) == p);
  TrainConfig more = t;
  more.epochs = 2;
  CHECK(finetune(p, c, data, 1.0, 2, t, 1) == train_classifier(c, data, more, {}, &p).params);
  CHECK_FALSE(finetune(p, c, data, 0.5, 2, t, 1) == p);
  CHECK_THROWS_AS(finetune(p, c, data, 0.0, 2, t, 1), InvalidArgument);
}

TEST_CASE("disentangling step") {
  NetConfig c = small_net();
  NetParams p = init_params(c);
  Surrogate net{c, p};
  PointCloud x = normalize_cloud(random_cloud(32, 8));
  DisentangleConfig none;
  none.iterations = 0;
  CHECK(adaptive_disentangle_step(x, net, none) == x);

  DisentangleConfig cfg;
  const Eigen::VectorXd anchor = forward(p, c, x).features;
  PointCloud y = adaptive_disentangle_step(x, net, cfg);
  const double found = (forward(p, c, y).features - anchor).norm();
  CHECK(found >= 0.0);

  double grid_best = 0.0;
  const double step = std::numbers::pi / 18;
  for (int a = 0; a < 36; ++a)
    for (int b = 0; b < 36; ++b)
      for (int g = 0; g < 36; ++g) {
        EulerAngles th{-std::numbers::pi + a * step, -std::numbers::pi + b * step, -std::numbers::pi + g * step};
        grid_best = std::max(grid_best, (forward(p, c, rotate_cloud(x, th)).features - anchor).norm());
      }
  CHECK(found >= 0.8 * grid_best);
}

TEST_CASE("adaptive training with a period beyond the run is plain training") {
  NetConfig c = small_net();
  auto data = small_train(3);
  TrainConfig t;
  t.epochs = 4;
  DisentangleConfig step;
  CHECK(adaptive_train(c, data, t, 5, step).params == train_classifier(c, data, t).params);
  CHECK_FALSE(adaptive_train(c, data, t, 2, step).params == train_classifier(c, data, t).params);
  CHECK_THROWS_AS(adaptive_train(c, data, t, 0, step), InvalidArgument);
}

TEST_CASE("attack dispatch") {
  NetConfig c = small_net();
  auto data = small_train(4);
  TrainConfig t;
  t.epochs = 2;
  AttackConfig none;
  CHECK(train_under_attack(c, data, t, none).params == train_classifier(c, data, t).params);
  AttackConfig noise;
  noise.kind = AttackKind::NoiseAug;
  CHECK_FALSE(train_under_attack(c, data, t, noise).params == train_classifier(c, data, t).params);
  for (auto k : {AttackKind::None, AttackKind::RotationAug, AttackKind::NoiseAug, AttackKind::Sor, AttackKind::Finetune,
                 AttackKind::Adaptive})
    CHECK(attack_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(attack_from_string("prune"), InvalidArgument);
}
