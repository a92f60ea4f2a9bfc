#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/LU>

#include "cloudmark/error.hpp"
#include "cloudmark/geometry.hpp"

using namespace cloudmark;

namespace {

PointCloud random_cloud(int n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  PointMatrix p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) p(i, j) = u(rng);
  return PointCloud(p);
}

double sq(double x) { return x * x; }

}  // namespace

TEST_CASE("rotation at zero angles is the identity") {
  CHECK(euler_rotation_matrix({0, 0, 0}).isApprox(Mat3::Identity(), 0.0));
}

TEST_CASE("quarter turn about z") {
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 s = euler_rotation_matrix({std::numbers::pi / 2, 0, 0});
  CHECK((s - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rotation is orthonormal with det +1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int t = 0; t < 50; ++t) {
    Mat3 s = euler_rotation_matrix({u(rng), u(rng), u(rng)});
    CHECK((s * s.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(s.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("angle partials match central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3, 3);
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    EulerAngles th{u(rng), u(rng), u(rng)};
    Rotation r = euler_rotation(th);
    for (int a = 0; a < 3; ++a) {
      auto plus = th.as_array(), minus = th.as_array();
      plus[a] += h;
      minus[a] -= h;
      Mat3 fd = (euler_rotation_matrix(EulerAngles::from_array(plus)) -
                 euler_rotation_matrix(EulerAngles::from_array(minus))) / (2 * h);
      double rel = (fd - r.d_angles[a]).norm() / std::max(1.0, r.d_angles[a].norm());
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("non-finite angle is rejected") {
  CHECK_THROWS_AS(euler_rotation({std::nan(""), 0, 0}), InvalidArgument);
  CHECK_THROWS_AS(euler_rotation({0, INFINITY, 0}), InvalidArgument);
}

TEST_CASE("rotate_cloud fixed points") {
  PointCloud x = random_cloud(40, 5);
  CHECK(rotate_cloud(x, EulerAngles{0, 0, 0}).points().isApprox(x.points(), 1e-15));
  PointCloud one = PointCloud::from_points({Vec3(0.3, -0.2, 0.9)});
  PointCloud r = rotate_cloud(one, EulerAngles{1.0, 2.0, 3.0});
  CHECK((r.point(0) - one.point(0)).norm() < 1e-15);
}

TEST_CASE("rotate_cloud preserves pairwise distances and the centroid") {
  PointCloud x = random_cloud(60, 8);
  PointCloud y = rotate_cloud(x, EulerAngles{0.7, -1.3, 2.2});
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j)
      worst = std::max(worst, std::abs((x.point(i) - x.point(j)).norm() - (y.point(i) - y.point(j)).norm()));
  CHECK(worst < 1e-9);
  CHECK((x.centroid() - y.centroid()).norm() < 1e-12);
}

TEST_CASE("normalize_cloud") {
  SUBCASE("two points on x") {
    PointCloud x = PointCloud::from_points({Vec3(0, 0, 0), Vec3(2, 0, 0)});
    PointCloud n = normalize_cloud(x);
    CHECK((n.point(0) - Vec3(0, 0.5, 0.5)).norm() < 1e-15);
    CHECK((n.point(1) - Vec3(1, 0.5, 0.5)).norm() < 1e-15);
  }
  SUBCASE("already filling the unit cube") {
    PointCloud x = PointCloud::from_points({Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(0.25, 0.5, 0.75)});
    CHECK(normalize_cloud(x).points().isApprox(x.points(), 1e-15));
  }
  SUBCASE("random cloud bounding box") {
    PointCloud n = normalize_cloud(random_cloud(100, 9, -4.0, 7.0));
    Vec3 lo = n.points().colwise().minCoeff(), hi = n.points().colwise().maxCoeff();
    CHECK(lo.minCoeff() >= -1e-12);
    CHECK(hi.maxCoeff() <= 1.0 + 1e-12);
    CHECK(std::abs((hi - lo).maxCoeff() - 1.0) < 1e-12);
  }
  SUBCASE("degenerate") {
    PointCloud x = PointCloud::from_points({Vec3(1, 2, 3), Vec3(1, 2, 3)});
    CHECK_THROWS_AS(normalize_cloud(x), DegenerateInput);
  }
}

TEST_CASE("chamfer distance") {
  PointCloud a = PointCloud::from_points({Vec3(0, 0, 0)});
  PointCloud b = PointCloud::from_points({Vec3(1, 0, 0)});
  CHECK(chamfer_distance(a, b) == 2.0);
  PointCloud x = random_cloud(32, 1);
  CHECK(chamfer_distance(x, x) == 0.0);

  PointCloud p = random_cloud(32, 2), q = random_cloud(32, 3);
  auto one_way = [](const PointCloud& s, const PointCloud& t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double best = INFINITY;
      for (std::size_t j = 0; j < t.size(); ++j) best = std::min(best, (s.point(i) - t.point(j)).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(s.size());
  };
  CHECK(std::abs(chamfer_distance(p, q) - (one_way(p, q) + one_way(q, p))) < 1e-12);
}

TEST_CASE("knn mean distances") {
  PointCloud line = PointCloud::from_points({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)});
  for (double d : knn_mean_distances(line, 1)) CHECK(d == 1.0);

  PointCloud square = PointCloud::from_points({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)});
  for (double d : knn_mean_distances(square, 2)) CHECK(d == doctest::Approx(1.0).epsilon(1e-15));

  PointCloud x = random_cloud(200, 4);
  std::vector<double> got = knn_mean_distances(x, 20);
  REQUIRE(got.size() == 200);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (j != i) d.push_back((x.point(i) - x.point(j)).norm());
    std::sort(d.begin(), d.end());
    double mean = 0.0;
    for (int k = 0; k < 20; ++k) mean += d[k];
    CHECK(std::abs(got[i] - mean / 20.0) < 1e-12);
  }

  CHECK_THROWS_AS(knn_mean_distances(line, 3), InvalidArgument);
}

TEST_CASE("feature distance") {
  Eigen::VectorXd u(2), v = Eigen::VectorXd::Zero(2);
  u << 3, 4;
  CHECK(feature_distance(u, v) == 5.0);
  CHECK(feature_distance(u, u) == 0.0);

  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  Eigen::VectorXd a(128), b(128);
  double sum = 0.0;
  for (int i = 0; i < 128; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
    sum += sq(a[i] - b[i]);
  }
  CHECK(std::abs(feature_distance(a, b) - std::sqrt(sum)) < 1e-12);
  CHECK_THROWS_AS(feature_distance(a, u), InvalidArgument);
}

TEST_CASE("point cloud rejects bad input") {
  CHECK_THROWS_AS(PointCloud{PointMatrix(0, 3)}, InvalidArgument);
  PointMatrix p(1, 3);
  p << 0, std::nan(""), 0;
  CHECK_THROWS_AS(PointCloud{p}, InvalidArgument);
}
