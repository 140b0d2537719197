#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "spvins/state.hpp"

namespace spvins {

struct ImuSample {
  double timestamp = 0.0;
  Vec3 omega = Vec3::Zero();  // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2, specific force
};

/// Continuous-time noise densities.
struct NoiseDensities {
  double sigma_g = 1.6968e-4;   // rad/s/sqrt(Hz)
  double sigma_a = 2.0e-3;      // m/s^2/sqrt(Hz)
  double sigma_wg = 1.9393e-5;  // rad/s^2/sqrt(Hz)
  double sigma_wa = 3.0e-3;     // m/s^3/sqrt(Hz)
};

/// Gravity in the global frame; z is up.
inline Vec3 default_gravity() { return {0.0, 0.0, -9.81}; }

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Mat15x12 = Eigen::Matrix<double, 15, 12>;

struct ContinuousJacobians {
  Mat15 F;
  Mat15x12 G;
};

/// Error-state dynamics d(dx)/dt = F dx + G w of the inertial block, with
/// w = [w_g, w_a, w_wg, w_wa]. `frame_rate` is the angular rate of the global
/// frame itself expressed in that frame (zero for a local, non-rotating frame).
ContinuousJacobians continuous_jacobians(const ImuState& imu, const Vec3& gravity,
                                         const Vec3& frame_rate = Vec3::Zero());

struct Discretized {
  Mat15 Phi;
  Mat15 Qd;
};

struct PropagationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Phi = I + F dt + (F dt)^2 / 2 and Qd = Phi G Qc G^T Phi^T dt.
Discretized discretize(const Mat15& F, const Mat15x12& G, const NoiseDensities& noise, double dt);

/// RK4 integration over [s0.t, s1.t] with linearly interpolated IMU readings.
ImuState propagate_mean(const ImuState& imu, const ImuSample& s0, const ImuSample& s1,
                        const Vec3& gravity = default_gravity());

/// P_II <- Phi P_II Phi^T + Qd, P_IO <- Phi P_IO.
void propagate_covariance(Covariance& cov, const Mat15& Phi, const Mat15& Qd);

/// Linear interpolation of two samples at time t.
ImuSample interpolate(const ImuSample& a, const ImuSample& b, double t);

/// Propagates mean and covariance from the current time to `t_end` using the
/// samples that bracket the interval. Transition matrices of the sub-steps are
/// chained so the off-diagonal blocks are touched once.
class ImuPropagator {
 public:
  ImuPropagator(NoiseDensities noise, Vec3 gravity = default_gravity())
      : noise_(noise), gravity_(std::move(gravity)) {}

  void add_sample(const ImuSample& s);
  /// Propagates state.imu and cov from `t_start` to `t_end`.
  void propagate(FullState& state, Covariance& cov, double t_start, double t_end);
  /// Drops samples no longer needed before time t.
  void prune(double t);

  const std::vector<ImuSample>& buffer() const { return buffer_; }

 private:
  NoiseDensities noise_;
  Vec3 gravity_;
  std::vector<ImuSample> buffer_;
};

}  // namespace spvins
