#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "spvins/geometry.hpp"

namespace spvins {

/// Essential matrix with x2^T E x1 = 0 from >= 8 normalized correspondences,
/// projected onto the essential manifold.
std::optional<Mat3> essential_eight_point(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2);

/// Eight-point start refined on the essential manifold by minimizing Sampson
/// distances (Levenberg-Marquardt).
std::optional<Mat3> essential_sampson_fit(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2,
                                          int iterations = 20);

/// Squared Sampson distance of one correspondence.
double sampson_error(const Mat3& E, const Vec2& x1, const Vec2& x2);

/// x_cam = R X + t
struct CameraFromWorld {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

/// Linear pose from >= 6 point/bearing pairs (direct linear transform).
std::optional<CameraFromWorld> pnp_dlt(const std::vector<Vec3>& X, const std::vector<Vec2>& x);

/// Gauss-Newton refinement of the reprojection error.
CameraFromWorld refine_pose(const CameraFromWorld& init, const std::vector<Vec3>& X,
                            const std::vector<Vec2>& x, int iterations = 10);

/// Reprojection error norm; infinite behind the camera.
double reprojection_error(const CameraFromWorld& T, const Vec3& X, const Vec2& x);

struct RansacOptions {
  int max_iterations = 2000;
  double confidence = 0.999;
  double epipolar_threshold = 6e-3;   // normalized units (Sampson distance)
  double reprojection_threshold = 6e-3;
  std::uint64_t seed = 1;
};

struct RansacResult {
  std::vector<std::size_t> inliers;
  int iterations = 0;
};

/// Essential-matrix RANSAC; returns the consensus set (indices into x1/x2).
RansacResult ransac_essential(const std::vector<Vec2>& x1, const std::vector<Vec2>& x2,
                              const RansacOptions& opts);

struct PnpResult {
  CameraFromWorld pose;
  std::vector<std::size_t> inliers;
  int iterations = 0;
};

/// DLT-PnP RANSAC followed by refinement on the inliers.
std::optional<PnpResult> ransac_pnp(const std::vector<Vec3>& X, const std::vector<Vec2>& x,
                                    const RansacOptions& opts);

}  // namespace spvins
