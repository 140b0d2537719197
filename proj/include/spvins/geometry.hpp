#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace spvins {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Rigid transform from a local frame to the global frame.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 transform(const Vec3& x) const { return R * x + t; }
  Pose inverse() const { return {R.transpose(), -R.transpose() * t}; }
  Pose operator*(const Pose& other) const { return {R * other.R, R * other.t + t}; }
};

/// Antisymmetric matrix with skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

Mat3 exp_so3(const Vec3& phi);

/// Rotation vector of R. Stable near identity and near pi.
Vec3 log_so3(const Mat3& R);

Quat quat_exp(const Vec3& phi);

/// Unit-norm quaternion with w >= 0. Storage is w-first project wide.
Quat canonical(const Quat& q);

/// True rotation from an estimate and a global-frame error angle:
/// q = dq(phi) (x) q_est, with dq the exact exponential of phi.
Quat apply_quat_error(const Vec3& phi, const Quat& q_est);

/// Inverse of apply_quat_error: phi = Log(q (x) q_est^-1).
Vec3 extract_quat_error(const Quat& q, const Quat& q_est);

/// Matrix form of apply_quat_error, R = Exp(phi) * R_est. To first order this is
/// R_est = (I - [phi x]) R.
Mat3 apply_rot_error(const Vec3& phi, const Mat3& R_est);

struct StError {
  Vec3 dv;
  Vec3 dp;
};

/// Lie-group transformed velocity/position errors:
///   dv_st = -dv + [v x] phi,   dp_st = -dp + [p x] phi
/// dv and dp are estimate-minus-truth offsets (inertial navigation sign
/// convention), which makes (phi, dv_st, dp_st) the right-invariant error.
StError st_error_from_standard(const Vec3& dv, const Vec3& dp, const Vec3& phi,
                               const Vec3& v, const Vec3& p);

/// Inverse of st_error_from_standard for fixed (v, p, phi).
StError st_error_to_standard(const Vec3& dv_st, const Vec3& dp_st, const Vec3& phi,
                             const Vec3& v, const Vec3& p);

/// Angle between two rotations in radians.
double rotation_distance(const Mat3& a, const Mat3& b);

}  // namespace spvins
