#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "cloudmark/error.hpp"
#include "cloudmark/net.hpp"

using namespace cloudmark;

namespace {

NetConfig small_config(std::uint64_t seed = 3) {
  NetConfig c;
  c.per_point_widths = {8, 16};
  c.head_widths = {8};
  c.class_count = 4;
  c.seed = seed;
  return c;
}

PointCloud random_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  PointMatrix p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) p(i, j) = u(rng);
  return PointCloud(p);
}

// Plain loops, no shared code with the library.
std::pair<Eigen::VectorXd, Eigen::VectorXd> reference_forward(const NetParams& p, const PointCloud& x) {
  std::vector<std::vector<double>> act;
  for (std::size_t i = 0; i < x.size(); ++i) act.push_back({x.point(i)[0], x.point(i)[1], x.point(i)[2]});
  for (const DenseLayer& l : p.point_layers) {
    for (auto& a : act) {
      std::vector<double> out(l.weight.rows());
      for (int o = 0; o < l.weight.rows(); ++o) {
        double s = l.bias[o];
        for (int i = 0; i < l.weight.cols(); ++i) s += l.weight(o, i) * a[i];
        out[o] = std::max(0.0, s);
      }
      a = out;
    }
  }
  std::vector<double> h(act[0].size(), -INFINITY);
  for (const auto& a : act)
    for (std::size_t c = 0; c < a.size(); ++c) h[c] = std::max(h[c], a[c]);
  std::vector<double> features = h;
  for (std::size_t li = 0; li < p.head_layers.size(); ++li) {
    const DenseLayer& l = p.head_layers[li];
    const bool last = li + 1 == p.head_layers.size();
    if (last) features = h;
    std::vector<double> out(l.weight.rows());
    for (int o = 0; o < l.weight.rows(); ++o) {
      double s = l.bias[o];
      for (int i = 0; i < l.weight.cols(); ++i) s += l.weight(o, i) * h[i];
      out[o] = last ? s : std::max(0.0, s);
    }
    h = out;
  }
  return {Eigen::Map<Eigen::VectorXd>(h.data(), h.size()),
          Eigen::Map<Eigen::VectorXd>(features.data(), features.size())};
}

bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + 1e-9; }

std::vector<LabeledCloud> toy_clouds(int per_class, int points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<LabeledCloud> out;
  for (int label = 0; label < 2; ++label) {
    const double c = label == 0 ? 0.15 : 0.85;
    for (int s = 0; s < per_class; ++s) {
      PointMatrix p(points, 3);
      for (int i = 0; i < points; ++i)
        for (int j = 0; j < 3; ++j) p(i, j) = c + n(rng);
      out.push_back({PointCloud(p), label});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("init shapes and determinism") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  REQUIRE(p.point_layers.size() == 2);
  REQUIRE(p.head_layers.size() == 2);
  CHECK(p.point_layers[0].weight.rows() == 8);
  CHECK(p.point_layers[0].weight.cols() == 3);
  CHECK(p.point_layers[1].weight.rows() == 16);
  CHECK(p.point_layers[1].weight.cols() == 8);
  CHECK(p.head_layers[0].weight.rows() == 8);
  CHECK(p.head_layers[0].weight.cols() == 16);
  CHECK(p.head_layers[1].weight.rows() == 4);
  CHECK(p.head_layers[1].weight.cols() == 8);
  CHECK(c.feature_dim() == 8);
  CHECK(init_params(c) == p);
  CHECK_FALSE(init_params(small_config(4)) == p);
  CHECK(NetConfig::mini(8).feature_dim() == 64);
}

TEST_CASE("flatten round trip and names") {
  NetParams p = init_params(small_config());
  NetParams q = p.zeros_like();
  q.assign_flat(p.flatten());
  CHECK(q == p);
  CHECK(p.tensor_names().front() == "point.0.weight");
  CHECK(p.tensor_names().size() == 8);
  CHECK(static_cast<std::size_t>(p.flatten().size()) == p.parameter_count());
}

TEST_CASE("forward matches a straight-line implementation") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  for (int s = 0; s < 5; ++s) {
    PointCloud x = random_cloud(30, 100 + s);
    ForwardResult r = forward(p, c, x);
    auto [logits, features] = reference_forward(p, x);
    CHECK((r.logits - logits).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((r.features - features).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("forward is invariant to point order") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  PointCloud x = random_cloud(40, 7);
  std::vector<int> order(40);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(1));
  PointMatrix q(40, 3);
  for (int i = 0; i < 40; ++i) q.row(i) = x.points().row(order[i]);
  ForwardResult a = forward(p, c, x), b = forward(p, c, PointCloud(q));
  CHECK(a.logits == b.logits);
  CHECK(a.features == b.features);
}

TEST_CASE("zero weights give a uniform posterior") {
  NetConfig c = small_config();
  NetParams p = init_params(c).zeros_like();
  ForwardResult r = forward(p, c, random_cloud(10, 2));
  CHECK(r.logits.isZero(0));
  Eigen::VectorXd pr = predict_proba(p, c, random_cloud(10, 2));
  for (int k = 0; k < 4; ++k) CHECK(pr[k] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax") {
  Eigen::VectorXd l(3);
  l << std::log(2.0), 0, 0;
  Eigen::VectorXd s = softmax(l);
  CHECK(std::abs(s[0] - 0.5) < 1e-15);
  CHECK(std::abs(s[1] - 0.25) < 1e-15);
  CHECK(std::abs(s[2] - 0.25) < 1e-15);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 3);
  Eigen::VectorXd r(6);
  for (int i = 0; i < 6; ++i) r[i] = n(rng);
  Eigen::VectorXd got = softmax(r);
  double z = 0.0;
  for (int i = 0; i < 6; ++i) z += std::exp(r[i]);
  for (int i = 0; i < 6; ++i) CHECK(std::abs(got[i] - std::exp(r[i]) / z) < 1e-12);

  Eigen::VectorXd big(2);
  big << 1000, 0;
  CHECK(softmax(big).allFinite());
}

TEST_CASE("non-finite activations raise") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  p.point_layers[1].bias[0] = std::nan("");
  CHECK_THROWS_AS(forward(p, c, random_cloud(5, 1)), NumericFailure);
}

TEST_CASE("parameter gradients match central differences") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  std::vector<LabeledCloud> batch{{random_cloud(20, 1), 0}, {random_cloud(20, 2), 3}, {random_cloud(20, 3), 1}};
  Eigen::VectorXd g = grad_params(p, c, batch).flatten();
  Eigen::VectorXd flat = p.flatten();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<Eigen::Index> pick(0, flat.size() - 1);
  const double h = 1e-5;
  int bad = 0;
  for (int probe = 0; probe < 120; ++probe) {
    const Eigen::Index i = pick(rng);
    NetParams plus = p, minus = p;
    Eigen::VectorXd fp = flat, fm = flat;
    fp[i] += h;
    fm[i] -= h;
    plus.assign_flat(fp);
    minus.assign_flat(fm);
    const double fd = (mean_cross_entropy(plus, c, batch) - mean_cross_entropy(minus, c, batch)) / (2 * h);
    if (!close_rel(g[i], fd, 1e-4)) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("duplicated sample leaves the mean gradient unchanged") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  LabeledCloud s{random_cloud(12, 9), 2};
  std::vector<LabeledCloud> one{s}, two{s, s};
  CHECK((grad_params(p, c, one).flatten() - grad_params(p, c, two).flatten()).cwiseAbs().maxCoeff() < 1e-15);
  std::vector<LabeledCloud> bad{{random_cloud(12, 9), 4}};
  CHECK_THROWS(grad_params(p, c, bad));
}

TEST_CASE("saturated fit has a vanishing gradient") {
  NetConfig c = small_config();
  NetParams p = init_params(c).zeros_like();
  p.head_layers.back().bias[1] = 40.0;
  std::vector<LabeledCloud> batch{{random_cloud(10, 4), 1}};
  CHECK(grad_params(p, c, batch).flatten().cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("input gradient matches central differences") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  PointCloud x = random_cloud(25, 31);
  Eigen::VectorXd target = Eigen::VectorXd::LinSpaced(c.feature_dim(), 0.0, 1.0);
  FeatureLossFn tail = [&](const Eigen::VectorXd& f) {
    return FeatureLoss{(f - target).squaredNorm(), 2.0 * (f - target)};
  };
  InputGradient g = grad_input(p, c, tail, x);
  auto value = [&](const PointMatrix& m) {
    Eigen::VectorXd f = forward(p, c, PointCloud(m)).features;
    return (f - target).squaredNorm();
  };
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> row(0, 24), col(0, 2);
  const double h = 1e-5;
  int bad = 0;
  for (int probe = 0; probe < 100; ++probe) {
    const int i = row(rng), j = col(rng);
    PointMatrix a = x.points(), b = x.points();
    a(i, j) += h;
    b(i, j) -= h;
    if (!close_rel(g.grad(i, j), (value(a) - value(b)) / (2 * h), 1e-4)) ++bad;
  }
  CHECK(bad == 0);

  FeatureLossFn constant = [&](const Eigen::VectorXd& f) {
    return FeatureLoss{1.0, Eigen::VectorXd::Zero(f.size())};
  };
  CHECK(grad_input(p, c, constant, x).grad.isZero(0));
}

TEST_CASE("points that win no pooled channel get zero gradient") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  PointCloud x = random_cloud(60, 12);
  ForwardResult r = forward(p, c, x);
  std::set<Eigen::Index> winners(r.trace.argmax.begin(), r.trace.argmax.end());
  REQUIRE(winners.size() < 60);
  FeatureLossFn tail = [](const Eigen::VectorXd& f) { return FeatureLoss{f.sum(), Eigen::VectorXd::Ones(f.size())}; };
  InputGradient g = grad_input(p, c, tail, x);
  for (Eigen::Index i = 0; i < 60; ++i)
    if (!winners.count(i)) CHECK(g.grad.row(i).isZero(0));
}

TEST_CASE("training separates a toy problem") {
  NetConfig c = small_config();
  c.class_count = 2;
  auto data = toy_clouds(20, 16, 3);
  TrainConfig t;
  t.epochs = 50;
  t.batch_size = 8;
  t.learning_rate = 5e-3;
  TrainResult r = train_classifier(c, data, t);
  CHECK(accuracy(NetModel(c, r.params), data) >= 0.99);
  CHECK(r.log.size() == 50);
}

TEST_CASE("training edge cases and determinism") {
  NetConfig c = small_config();
  c.class_count = 2;
  auto data = toy_clouds(6, 8, 4);
  TrainConfig t;
  t.epochs = 0;
  CHECK(train_classifier(c, data, t).params == init_params(c));
  t.epochs = 3;
  CHECK(train_classifier(c, data, t).params == train_classifier(c, data, t).params);
}

TEST_CASE("checkpoint round trip") {
  NetConfig c = small_config();
  NetParams p = init_params(c);
  auto path = std::filesystem::temp_directory_path() / "cloudmark_test_checkpoint.json";
  save_checkpoint(path.string(), c, p);
  Checkpoint back = load_checkpoint(path.string());
  CHECK(back.config == c);
  CHECK(back.params == p);
  std::filesystem::remove(path);
}
