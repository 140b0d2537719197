#include "spvins/propagation.hpp"

#include <algorithm>

namespace spvins {

ContinuousJacobians continuous_jacobians(const ImuState& imu, const Vec3& gravity,
                                         const Vec3& frame_rate) {
  using namespace layout;
  const Mat3 R = imu.q_GB.toRotationMatrix();
  const Mat3 W = skew(frame_rate);
  const Mat3 V = skew(imu.v_GB);
  const Mat3 P = skew(imu.p_GB);
  const Mat3 I = Mat3::Identity();

  ContinuousJacobians J;
  J.F.setZero();
  J.F.block<3, 3>(kRot, kRot) = -W;
  J.F.block<3, 3>(kRot, kBg) = -R;

  J.F.block<3, 3>(kVel, kRot) = skew(gravity) + V * W;
  J.F.block<3, 3>(kVel, kVel) = -2.0 * W;
  J.F.block<3, 3>(kVel, kBg) = -V * R;
  J.F.block<3, 3>(kVel, kBa) = -R;

  J.F.block<3, 3>(kPos, kRot) = -P * W;
  J.F.block<3, 3>(kPos, kVel) = I;
  J.F.block<3, 3>(kPos, kBg) = -P * R;

  J.G.setZero();
  J.G.block<3, 3>(kRot, 0) = -R;
  J.G.block<3, 3>(kVel, 0) = -V * R;
  J.G.block<3, 3>(kVel, 3) = -R;
  J.G.block<3, 3>(kPos, 0) = -P * R;
  J.G.block<3, 3>(kBg, 6) = I;
  J.G.block<3, 3>(kBa, 9) = I;
  return J;
}

Discretized discretize(const Mat15& F, const Mat15x12& G, const NoiseDensities& noise, double dt) {
  if (!(dt > 0.0)) throw PropagationError("discretization step must be positive");
  const Mat15 Fdt = F * dt;
  Discretized d;
  d.Phi = Mat15::Identity() + Fdt + 0.5 * Fdt * Fdt;

  Eigen::Matrix<double, 12, 1> qc;
  qc << Vec3::Constant(noise.sigma_g * noise.sigma_g), Vec3::Constant(noise.sigma_a * noise.sigma_a),
      Vec3::Constant(noise.sigma_wg * noise.sigma_wg), Vec3::Constant(noise.sigma_wa * noise.sigma_wa);
  const Mat15x12 PG = d.Phi * G;
  d.Qd = PG * qc.asDiagonal() * PG.transpose() * dt;
  d.Qd = 0.5 * (d.Qd + d.Qd.transpose()).eval();
  return d;
}

namespace {

struct Derivative {
  Eigen::Vector4d dq;  // w, x, y, z
  Vec3 dv;
  Vec3 dp;
};

Derivative dynamics(const Eigen::Vector4d& q, const Vec3& v, const Vec3& omega, const Vec3& accel,
                    const Vec3& gravity) {
  const Quat qq(q[0], q[1], q[2], q[3]);
  const Quat wq(0.0, omega.x(), omega.y(), omega.z());
  const Quat qdot = qq * wq;
  Derivative d;
  d.dq << 0.5 * qdot.w(), 0.5 * qdot.x(), 0.5 * qdot.y(), 0.5 * qdot.z();
  d.dv = qq.normalized().toRotationMatrix() * accel + gravity;
  d.dp = v;
  return d;
}

}  // namespace

ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t) {
  const double span = b.timestamp - a.timestamp;
  const double lambda = span > 0.0 ? (t - a.timestamp) / span : 0.0;
  return {t, a.omega + lambda * (b.omega - a.omega), a.accel + lambda * (b.accel - a.accel)};
}

ImuState propagate_mean(const ImuState& imu, const ImuSample& s0, const ImuSample& s1,
                        const Vec3& gravity) {
  const double h = s1.timestamp - s0.timestamp;
  if (!(h > 0.0)) throw PropagationError("IMU samples must have increasing timestamps");

  const Vec3 w0 = s0.omega - imu.bg, w1 = s1.omega - imu.bg;
  const Vec3 a0 = s0.accel - imu.ba, a1 = s1.accel - imu.ba;
  const Vec3 wm = 0.5 * (w0 + w1), am = 0.5 * (a0 + a1);

  const Eigen::Vector4d q{imu.q_GB.w(), imu.q_GB.x(), imu.q_GB.y(), imu.q_GB.z()};
  const Vec3& v = imu.v_GB;
  const Vec3& p = imu.p_GB;

  const Derivative k1 = dynamics(q, v, w0, a0, gravity);
  const Derivative k2 =
      dynamics(q + 0.5 * h * k1.dq, v + 0.5 * h * k1.dv, wm, am, gravity);
  const Derivative k3 =
      dynamics(q + 0.5 * h * k2.dq, v + 0.5 * h * k2.dv, wm, am, gravity);
  const Derivative k4 = dynamics(q + h * k3.dq, v + h * k3.dv, w1, a1, gravity);

  ImuState out = imu;
  const Eigen::Vector4d qn = q + h / 6.0 * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.q_GB = canonical(Quat(qn[0], qn[1], qn[2], qn[3]));
  out.v_GB = v + h / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  out.p_GB = p + h / 6.0 * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  return out;
}

void propagate_covariance(Covariance& cov, const Mat15& Phi, const Mat15& Qd) {
  const int n = static_cast<int>(cov.rows());
  if (n < 15 || cov.cols() != n) throw PropagationError("covariance too small for propagation");
  const int rest = n - 15;
  const Mat15 Pii = cov.topLeftCorner<15, 15>();
  cov.topLeftCorner<15, 15>() = Phi * Pii * Phi.transpose() + Qd;
  if (rest > 0) {
    const Eigen::MatrixXd Pio = Phi * cov.topRightCorner(15, rest);
    cov.topRightCorner(15, rest) = Pio;
    cov.bottomLeftCorner(rest, 15) = Pio.transpose();
  }
  cov.topLeftCorner<15, 15>() =
      0.5 * (cov.topLeftCorner<15, 15>() + cov.topLeftCorner<15, 15>().transpose()).eval();
}

void ImuPropagator::add_sample(const ImuSample& s) {
  if (!buffer_.empty() && s.timestamp <= buffer_.back().timestamp) {
    throw PropagationError("IMU samples must have strictly increasing timestamps");
  }
  buffer_.push_back(s);
}

void ImuPropagator::propagate(FullState& state, Covariance& cov, double t_start, double t_end) {
  if (t_end <= t_start) return;
  if (buffer_.empty() || buffer_.front().timestamp > t_start || buffer_.back().timestamp < t_end) {
    throw PropagationError("IMU buffer does not cover the propagation interval");
  }
  // Sub-step boundaries: t_start, every sample strictly inside, t_end.
  std::vector<ImuSample> steps;
  auto upper = std::upper_bound(buffer_.begin(), buffer_.end(), t_start,
                                [](double t, const ImuSample& s) { return t < s.timestamp; });
  auto lo = std::prev(upper);
  steps.push_back(interpolate(*lo, *upper, t_start));
  for (auto it = upper; it != buffer_.end() && it->timestamp < t_end; ++it) steps.push_back(*it);
  auto hi = std::lower_bound(buffer_.begin(), buffer_.end(), t_end,
                             [](const ImuSample& s, double t) { return s.timestamp < t; });
  if (hi->timestamp == t_end) {
    steps.push_back(*hi);
  } else {
    steps.push_back(interpolate(*std::prev(hi), *hi, t_end));
  }

  Mat15 Phi_total = Mat15::Identity();
  Mat15 Q_total = Mat15::Zero();
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    const double dt = steps[k + 1].timestamp - steps[k].timestamp;
    if (dt <= 0.0) continue;
    const ImuState next = propagate_mean(state.imu, steps[k], steps[k + 1], gravity_);
    // Jacobians at the step midpoint estimate.
    ImuState mid = state.imu;
    mid.q_GB = next.q_GB.slerp(0.5, state.imu.q_GB);
    mid.v_GB = 0.5 * (next.v_GB + state.imu.v_GB);
    mid.p_GB = 0.5 * (next.p_GB + state.imu.p_GB);
    const ContinuousJacobians J = continuous_jacobians(mid, gravity_);
    const Discretized d = discretize(J.F, J.G, noise_, dt);
    Phi_total = d.Phi * Phi_total;
    Q_total = d.Phi * Q_total * d.Phi.transpose() + d.Qd;
    state.imu = next;
  }
  propagate_covariance(cov, Phi_total, Q_total);
}

void ImuPropagator::prune(double t) {
  auto it = std::upper_bound(buffer_.begin(), buffer_.end(), t,
                             [](double tt, const ImuSample& s) { return tt < s.timestamp; });
  if (it == buffer_.begin()) return;
  --it;  // keep the last sample at or before t
  buffer_.erase(buffer_.begin(), it);
}

}  // namespace spvins
