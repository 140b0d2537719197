#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "spvins/io.hpp"

namespace spvins {

enum class AlignMode { SE3, PosYaw, None };

AlignMode parse_align_mode(const std::string& s);

/// ref ~= R * est + t
struct Alignment {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

/// Pairs (est index, ref index) by nearest timestamp within max_dt, one-to-one
/// and in time order.
std::vector<std::pair<std::size_t, std::size_t>> associate(const std::vector<TrajectoryPoint>& est,
                                                           const std::vector<TrajectoryPoint>& ref,
                                                           double max_dt = 0.02);

/// Closed-form least squares over point pairs. PosYaw restricts the rotation to
/// yaw (roll and pitch are observable through gravity).
Alignment align_points(const std::vector<Vec3>& est, const std::vector<Vec3>& ref, AlignMode mode);

Alignment align(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                AlignMode mode = AlignMode::SE3, double max_dt = 0.02);

std::vector<TrajectoryPoint> apply_alignment(const Alignment& a, const std::vector<TrajectoryPoint>& est);

struct AteResult {
  double rmse = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;
  Alignment alignment;
  std::vector<double> errors;  // per associated pair
};

AteResult ate(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
              AlignMode mode = AlignMode::SE3, double max_dt = 0.02);

double ate_rmse(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                AlignMode mode = AlignMode::SE3);

struct RpeStats {
  double length = 0.0;  // m
  std::size_t count = 0;
  double trans_mean = 0.0;  // m
  double trans_rmse = 0.0;
  double rot_mean = 0.0;  // deg
  double rot_rmse = 0.0;
};

inline const std::vector<double> kDefaultSegments = {10.0, 50.0, 100.0, 200.0};

/// Relative pose errors over segments of travelled ground-truth distance. Each
/// associated pose starts one segment ending at the first pose at least
/// `length` further along the path. No alignment is needed.
std::vector<RpeStats> rpe(const std::vector<TrajectoryPoint>& est,
                          const std::vector<TrajectoryPoint>& ref,
                          const std::vector<double>& lengths = kDefaultSegments,
                          double max_dt = 0.02);

using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Pose error in the filter's convention: [phi, p - Exp(phi) p_est].
Eigen::Matrix<double, 6, 1> pose_error(const Pose& truth, const Pose& est);

double pose_nees(const Pose& truth, const Pose& est, const Mat6& cov);

struct NeesResult {
  std::vector<double> per_frame;
  double mean = 0.0;
};

NeesResult nees(const std::vector<Pose>& est, const std::vector<Mat6>& covs,
                const std::vector<Pose>& truth);

}  // namespace spvins
