#include "spvins/geometry.hpp"

#include <cmath>

namespace spvins {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 K = skew(phi);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + K + 0.5 * K * K;
  }
  const double theta = std::sqrt(theta2);
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * K + b * K * K;
}

Vec3 log_so3(const Mat3& R) {
  // Quaternion route is well conditioned everywhere, including near pi.
  Quat q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 xyz = q.vec();
  const double s = xyz.norm();
  if (s < 1e-12) {
    return 2.0 * xyz / q.w();
  }
  const double theta = 2.0 * std::atan2(s, q.w());
  return theta * xyz / s;
}

Quat quat_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const double half = 0.5 * theta;
  double k;
  if (theta < 1e-8) {
    k = 0.5 - theta * theta / 48.0;
  } else {
    k = std::sin(half) / theta;
  }
  Quat q(std::cos(half), k * phi.x(), k * phi.y(), k * phi.z());
  return q.normalized();
}

Quat canonical(const Quat& q) {
  Quat out = q.normalized();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

Quat apply_quat_error(const Vec3& phi, const Quat& q_est) {
  return canonical(quat_exp(phi) * q_est);
}

Vec3 extract_quat_error(const Quat& q, const Quat& q_est) {
  return log_so3((q * q_est.conjugate()).normalized().toRotationMatrix());
}

Mat3 apply_rot_error(const Vec3& phi, const Mat3& R_est) {
  return exp_so3(phi) * R_est;
}

StError st_error_from_standard(const Vec3& dv, const Vec3& dp, const Vec3& phi,
                               const Vec3& v, const Vec3& p) {
  return {-dv + skew(v) * phi, -dp + skew(p) * phi};
}

StError st_error_to_standard(const Vec3& dv_st, const Vec3& dp_st, const Vec3& phi,
                             const Vec3& v, const Vec3& p) {
  return {-dv_st + skew(v) * phi, -dp_st + skew(p) * phi};
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  return log_so3(a.transpose() * b).norm();
}

}  // namespace spvins
