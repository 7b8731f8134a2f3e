// Rigid-transform algebra on SE(3) shared by every module.
//
// Conventions:
//  - Pose stores a unit quaternion + translation; rotation-matrix and
//    quaternion views are both exposed.
//  - TangentVector packs [tx, ty, tz, alpha, beta, gamma] where the angles
//    are roll/pitch/yaw under the intrinsic x-y'-z'' Euler convention, i.e.
//    R = Rx(alpha) * Ry(beta) * Rz(gamma). To first order this equals
//    I + skew([alpha, beta, gamma]).
//  - Poses reconstructed from a tangent vector always use the exact Euler
//    composition, never the linearized matrix, so iterated alignment cannot
//    accumulate non-orthonormality.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace lodo {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// 6-DOF increment [tx, ty, tz, alpha, beta, gamma] (meters, radians).
/// Valid as a linearization point only in the small-angle regime.
struct TangentVector {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Vector3d angles = Eigen::Vector3d::Zero();  // roll, pitch, yaw

  TangentVector() = default;
  TangentVector(const Eigen::Vector3d& t, const Eigen::Vector3d& a)
      : translation(t), angles(a) {}
  explicit TangentVector(const Vector6d& v)
      : translation(v.head<3>()), angles(v.tail<3>()) {}

  Vector6d vector() const {
    Vector6d v;
    v << translation, angles;
    return v;
  }

  /// Mixed norm used for convergence checks: |t| in meters plus |angles|
  /// in radians.
  double mixed_norm() const { return translation.norm() + angles.norm(); }

  bool all_finite() const {
    return translation.allFinite() && angles.allFinite();
  }
};

/// Rigid transform on SE(3). Immutable value type; share freely.
class Pose {
 public:
  Pose() : q_(Eigen::Quaterniond::Identity()), t_(Eigen::Vector3d::Zero()) {}

  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
      : q_(q.normalized()), t_(t) {}

  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& t)
      : q_(rotation), t_(t) {
    q_.normalize();
  }

  static Pose identity() { return Pose(); }

  static Pose from_matrix(const Eigen::Matrix4d& m) {
    return Pose(Eigen::Matrix3d(m.topLeftCorner<3, 3>()),
                Eigen::Vector3d(m.topRightCorner<3, 1>()));
  }

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Eigen::Matrix3d rotation() const { return q_.toRotationMatrix(); }
  const Eigen::Vector3d& translation() const { return t_; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation();
    m.topRightCorner<3, 1>() = t_;
    return m;
  }

  /// Applies b then this (this * b as homogeneous matrices).
  Pose compose(const Pose& b) const {
    return Pose(Eigen::Quaterniond(q_ * b.q_), q_ * b.t_ + t_);
  }

  Pose operator*(const Pose& b) const { return compose(b); }

  /// R p + t
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return q_ * p + t_; }
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return apply(p);
  }

  Eigen::Vector3f apply(const Eigen::Vector3f& p) const {
    Eigen::Vector3d pd = p.cast<double>();
    return apply(pd).cast<float>();
  }

  Pose inverse() const {
    Eigen::Quaterniond qi = q_.conjugate();
    return Pose(qi, -(qi * t_));
  }

  /// Fractional transform: slerp(identity -> R, s) and s * t.
  Pose interpolate(double s) const {
    if (s < 0.0 || s > 1.0)
      throw std::invalid_argument("Pose::interpolate: ratio outside [0,1]");
    return Pose(Eigen::Quaterniond::Identity().slerp(s, q_), s * t_);
  }

  /// Rotation angle in radians, in [0, pi].
  double rotation_angle() const {
    return Eigen::AngleAxisd(q_).angle();
  }

  bool is_valid(double tol = 1e-9) const {
    if (!t_.allFinite() || !q_.coeffs().allFinite()) return false;
    Eigen::Matrix3d r = rotation();
    return ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < tol) &&
           std::abs(r.determinant() - 1.0) < tol;
  }

 private:
  Eigen::Quaterniond q_;
  Eigen::Vector3d t_;
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& a) {
  Eigen::Matrix3d s;
  s << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return s;
}

/// Exact pose from a tangent vector: R = Rx(alpha) Ry(beta) Rz(gamma).
inline Pose from_tangent(const TangentVector& xi) {
  Eigen::Quaterniond q =
      Eigen::AngleAxisd(xi.angles.x(), Eigen::Vector3d::UnitX()) *
      Eigen::AngleAxisd(xi.angles.y(), Eigen::Vector3d::UnitY()) *
      Eigen::AngleAxisd(xi.angles.z(), Eigen::Vector3d::UnitZ());
  return Pose(q, xi.translation);
}

/// Inverse of from_tangent away from the pitch singularity (|beta| = pi/2).
inline TangentVector to_tangent(const Pose& pose) {
  Eigen::Matrix3d r = pose.rotation();
  double beta = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  double alpha, gamma;
  if (std::abs(r(0, 2)) < 1.0 - 1e-12) {
    alpha = std::atan2(-r(1, 2), r(2, 2));
    gamma = std::atan2(-r(0, 1), r(0, 0));
  } else {
    // Gimbal lock: alpha and gamma are coupled, put everything in alpha.
    alpha = std::atan2(r(2, 1), r(1, 1));
    gamma = 0.0;
  }
  return TangentVector(pose.translation(),
                       Eigen::Vector3d(alpha, beta, gamma));
}

/// First-order rotation model I + skew(angles); used only inside the
/// least-squares residual derivation, never for pose reconstruction.
inline Eigen::Matrix3d linearized_rotation(const Eigen::Vector3d& angles) {
  return Eigen::Matrix3d::Identity() + skew(angles);
}

}  // namespace lodo
