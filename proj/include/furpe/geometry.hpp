#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "furpe/common.hpp"

namespace furpe {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Rotation as axis * angle(radians). Canonical form keeps the magnitude in
// [0, 2*pi).
using AxisAngle = Eigen::Vector3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Wraps the rotation magnitude into [0, 2*pi), preserving the axis.
inline AxisAngle canonicalize(const AxisAngle& aa) {
  double angle = aa.norm();
  if (angle < 2.0 * M_PI || !std::isfinite(angle)) return aa;
  double wrapped = std::fmod(angle, 2.0 * M_PI);
  return aa * (wrapped / angle);
}

// Axis-angle exponential map.
inline Mat3 rodrigues(const AxisAngle& aa) {
  if (!aa.allFinite()) {
    throw std::invalid_argument("rodrigues: non-finite axis-angle input");
  }
  double angle = aa.norm();
  if (angle < 1e-12) {
    Mat3 k = skew(aa);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  Vec3 axis = aa / angle;
  Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(angle) * k +
         (1.0 - std::cos(angle)) * k * k;
}

// d(rodrigues)/d(aa_i), i = 0..2 (Gallego & Yezzi closed form).
inline std::array<Mat3, 3> rodrigues_jacobian(const AxisAngle& aa) {
  std::array<Mat3, 3> jac;
  double n2 = aa.squaredNorm();
  if (n2 < 1e-16) {
    for (int i = 0; i < 3; ++i) jac[i] = skew(Vec3::Unit(i));
    return jac;
  }
  Mat3 r = rodrigues(aa);
  Mat3 eye_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    Vec3 w = aa.cross(eye_minus_r.col(i));
    jac[i] = ((aa[i] * skew(aa) + skew(w)) / n2) * r;
  }
  return jac;
}

// Matrix logarithm of a rotation; returns axis-angle with angle in [0, pi].
inline AxisAngle rotation_log(const Mat3& r) {
  double c = (r.trace() - 1.0) * 0.5;
  c = std::min(1.0, std::max(-1.0, c));
  double angle = std::acos(c);
  if (angle < 1e-10) {
    return Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)) * 0.5;
  }
  if (angle > M_PI - 1e-6) {
    // Near half-turn: recover the axis from the symmetric part.
    Mat3 s = 0.5 * (r + Mat3::Identity());
    Vec3 axis(std::sqrt(std::max(0.0, s(0, 0))),
              std::sqrt(std::max(0.0, s(1, 1))),
              std::sqrt(std::max(0.0, s(2, 2))));
    // Fix signs using the off-diagonal terms.
    int k = 0;
    if (axis.y() > axis[k]) k = 1;
    if (axis.z() > axis[k]) k = 2;
    if (axis[k] < 1e-12) return Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
      if (i == k) continue;
      double off = s(k, i);
      axis[i] = (off < 0 ? -std::abs(axis[i]) : std::abs(axis[i]));
    }
    if (axis[k] < 0) axis = -axis;
    axis.normalize();
    // Resolve the overall sign from the skew part when it survives.
    Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    if (w.dot(axis) < 0) axis = -axis;
    return axis * angle;
  }
  Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return w * (angle / (2.0 * std::sin(angle)));
}

// Pinhole camera. World frame is right-handed and y-up; the camera looks
// down -z and sits subject_depth meters in front of the world origin, so a
// point's projective depth is point.z + subject_depth.
struct Camera {
  double focal_length = 1000.0;   // pixels
  Vec2 principal_point{500.0, 500.0};
  double subject_depth = 2.0;     // meters, > 0

  void validate() const {
    if (!(focal_length > 0)) throw ConfigError("camera: focal_length must be > 0");
    if (!(subject_depth > 0)) throw ConfigError("camera: subject_depth must be > 0");
  }
};

inline Vec2 project_point(const Vec3& p, const Camera& cam) {
  double z = p.z() + cam.subject_depth;
  if (!(z > 0)) {
    throw NumericError("project: point at or behind the camera plane");
  }
  return Vec2(cam.focal_length * p.x() / z + cam.principal_point.x(),
              cam.focal_length * p.y() / z + cam.principal_point.y());
}

inline std::vector<Vec2> project(const std::vector<Vec3>& points, const Camera& cam) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, cam));
  return out;
}

// d(pixel)/d(point), 2x3.
inline Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p, const Camera& cam) {
  double z = p.z() + cam.subject_depth;
  if (!(z > 0)) {
    throw NumericError("project_jacobian: point at or behind the camera plane");
  }
  Eigen::Matrix<double, 2, 3> j;
  double f = cam.focal_length;
  j << f / z, 0, -f * p.x() / (z * z), 0, f / z, -f * p.y() / (z * z);
  return j;
}

struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }

  // Applies to an N x 3 point matrix (rows are points).
  MatX apply(const MatX& points) const {
    MatX out = scale * (points * rotation.transpose());
    out.rowwise() += translation.transpose();
    return out;
  }
};

// Least-squares similarity alignment (Umeyama): minimizes
// sum_i || s*R*source_i + t - target_i ||^2. with_scale=false constrains
// s = 1. Points are rows of N x 3 matrices.
inline SimilarityTransform umeyama_align(const MatX& source, const MatX& target,
                                         bool with_scale = true) {
  if (source.rows() != target.rows() || source.cols() != 3 || target.cols() != 3) {
    throw NumericError("umeyama_align: point sets must be N x 3 with equal N");
  }
  const auto n = source.rows();
  if (n < 3) throw NumericError("umeyama_align: need at least 3 points");

  Vec3 mu_s = source.colwise().mean();
  Vec3 mu_t = target.colwise().mean();
  MatX cs = source.rowwise() - mu_s.transpose();
  MatX ct = target.rowwise() - mu_t.transpose();

  double var_s = cs.squaredNorm() / static_cast<double>(n);
  Mat3 cov = (ct.transpose() * cs) / static_cast<double>(n);

  // Degeneracy check on the centered source scatter (rank must be >= 2).
  Eigen::SelfAdjointEigenSolver<Mat3> es(cs.transpose() * cs / static_cast<double>(n));
  Vec3 ev = es.eigenvalues();  // ascending
  if (ev(1) <= 1e-12 * std::max(ev(2), 1e-30)) {
    throw NumericError("umeyama_align: degenerate source points (rank < 2)");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) {
    d(2) = -1.0;  // reflection fix: flip the smallest singular direction
  }
  Mat3 r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();

  double s = 1.0;
  if (with_scale) s = svd.singularValues().dot(d) / var_s;

  SimilarityTransform out;
  out.rotation = r;
  out.scale = s;
  out.translation = mu_t - s * (r * mu_s);
  return out;
}

}  // namespace furpe
