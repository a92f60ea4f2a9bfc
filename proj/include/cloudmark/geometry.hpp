#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace cloudmark {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// M x 3, one point per row.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// An ordered set of M >= 1 finite 3D points. Row i is point i.
class PointCloud {
 public:
  PointCloud() = default;
  /// Throws InvalidArgument on an empty matrix or a non-finite coordinate.
  explicit PointCloud(PointMatrix points);

  static PointCloud from_points(const std::vector<Vec3>& points);

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  const PointMatrix& points() const noexcept { return points_; }
  Vec3 point(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)).transpose(); }
  Vec3 centroid() const;

  bool operator==(const PointCloud& other) const { return points_ == other.points_; }

 private:
  PointMatrix points_;
};

/// Euler angles in radians. Any finite value is accepted.
struct EulerAngles {
  double psi = 0.0;    // about z
  double phi = 0.0;    // about y
  double gamma = 0.0;  // about x

  std::array<double, 3> as_array() const { return {psi, phi, gamma}; }
  static EulerAngles from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
  bool operator==(const EulerAngles&) const = default;
};

/// S(theta) = Rz(psi) * Ry(phi) * Rx(gamma) together with its three partials.
struct Rotation {
  Mat3 matrix;
  std::array<Mat3, 3> d_angles;  // dS/dpsi, dS/dphi, dS/dgamma
};

/// Throws InvalidArgument if any angle is not finite.
Rotation euler_rotation(const EulerAngles& theta);
inline Mat3 euler_rotation_matrix(const EulerAngles& theta) { return euler_rotation(theta).matrix; }

/// Points are row vectors: x' = (x - c) * S + c with c the centroid.
PointCloud rotate_cloud(const PointCloud& x, const EulerAngles& theta);
PointCloud rotate_cloud(const PointCloud& x, const Mat3& s);

/// Uniform scale + translation so the longest bounding-box side spans [0,1]
/// and the shorter sides are centered at 0.5. Throws DegenerateInput when
/// every point coincides.
PointCloud normalize_cloud(const PointCloud& x);

/// Symmetric squared Chamfer distance.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

/// Mean Euclidean distance from each point to its k nearest other points
/// (exact, brute force). Requires size() > k >= 1.
std::vector<double> knn_mean_distances(const PointCloud& x, std::size_t k);

double feature_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

}  // namespace cloudmark
