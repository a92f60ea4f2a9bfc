#include "cloudmark/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cloudmark/error.hpp"

namespace cloudmark {

PointCloud::PointCloud(PointMatrix points) : points_(std::move(points)) {
  if (points_.rows() == 0) throw InvalidArgument("point cloud must contain at least one point");
  if (!points_.allFinite()) throw InvalidArgument("point cloud contains a non-finite coordinate");
}

PointCloud PointCloud::from_points(const std::vector<Vec3>& points) {
  PointMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return PointCloud(std::move(m));
}

Vec3 PointCloud::centroid() const { return points_.colwise().mean().transpose(); }

namespace {

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}
Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}
Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}
Mat3 d_rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return r;
}
Mat3 d_rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return r;
}
Mat3 d_rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return r;
}

}  // namespace

Rotation euler_rotation(const EulerAngles& theta) {
  if (!std::isfinite(theta.psi) || !std::isfinite(theta.phi) || !std::isfinite(theta.gamma))
    throw InvalidArgument("Euler angles must be finite");
  const Mat3 rz = rot_z(theta.psi), ry = rot_y(theta.phi), rx = rot_x(theta.gamma);
  Rotation r;
  r.matrix = rz * ry * rx;
  r.d_angles[0] = d_rot_z(theta.psi) * ry * rx;
  r.d_angles[1] = rz * d_rot_y(theta.phi) * rx;
  r.d_angles[2] = rz * ry * d_rot_x(theta.gamma);
  return r;
}

PointCloud rotate_cloud(const PointCloud& x, const Mat3& s) {
  const Eigen::RowVector3d c = x.points().colwise().mean();
  PointMatrix out = (x.points().rowwise() - c) * s;
  out.rowwise() += c;
  return PointCloud(std::move(out));
}

PointCloud rotate_cloud(const PointCloud& x, const EulerAngles& theta) {
  return rotate_cloud(x, euler_rotation_matrix(theta));
}

PointCloud normalize_cloud(const PointCloud& x) {
  const Eigen::RowVector3d lo = x.points().colwise().minCoeff();
  const Eigen::RowVector3d hi = x.points().colwise().maxCoeff();
  const Eigen::RowVector3d extent = hi - lo;
  const double longest = extent.maxCoeff();
  if (!(longest > 0.0)) throw DegenerateInput("cannot normalize a cloud with zero spatial extent");
  const double scale = 1.0 / longest;
  const Eigen::RowVector3d offset = (Eigen::RowVector3d::Ones() - extent * scale) * 0.5;
  PointMatrix out = ((x.points().rowwise() - lo) * scale).rowwise() + offset;
  // The longest axis must land on exactly [0,1] despite rounding.
  return PointCloud(out.cwiseMax(0.0).cwiseMin(1.0));
}

namespace {

double directed_mean_sq(const PointMatrix& from, const PointMatrix& to) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    const double best = (to.rowwise() - from.row(i)).rowwise().squaredNorm().minCoeff();
    total += best;
  }
  return total / static_cast<double>(from.rows());
}

}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw InvalidArgument("chamfer_distance: empty cloud");
  return directed_mean_sq(a.points(), b.points()) + directed_mean_sq(b.points(), a.points());
}

std::vector<double> knn_mean_distances(const PointCloud& x, std::size_t k) {
  const std::size_t m = x.size();
  if (k < 1 || m <= k)
    throw InvalidArgument("knn_mean_distances: need size > k >= 1 (size " + std::to_string(m) +
                          ", k " + std::to_string(k) + ")");
  const PointMatrix& p = x.points();
  std::vector<double> out(m);
  std::vector<double> d(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      d[n++] = (p.row(static_cast<Eigen::Index>(j)) - p.row(static_cast<Eigen::Index>(i))).norm();
    }
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += d[j];
    out[i] = sum / static_cast<double>(k);
  }
  return out;
}

double feature_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size())
    throw InvalidArgument("feature_distance: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
  return (u - v).norm();
}

}  // namespace cloudmark
