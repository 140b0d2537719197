#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "spvins/state.hpp"

namespace spvins {

using TrackId = std::int64_t;

/// One image of a frame: the pose block it belongs to and which camera.
struct ViewId {
  PoseHandle frame;
  Eye eye = Eye::Left;
  auto operator<=>(const ViewId&) const = default;
};

/// Default measurement sigma: one pixel at a focal length of 460 px.
inline constexpr double kDefaultPixelSigma = 1.0 / 460.0;

struct NormalizedObservation {
  ViewId view;
  Vec2 uv = Vec2::Zero();
  double sigma = kDefaultPixelSigma;

  Vec3 ray() const { return {uv.x(), uv.y(), 1.0}; }
};

/// Normalized observations of one landmark; at most one per view.
struct FeatureTrack {
  TrackId id = 0;
  std::vector<NormalizedObservation> observations;

  std::optional<std::size_t> find(const ViewId& view) const;
  /// Newest left observation that has a right mate in the same frame.
  std::optional<std::size_t> newest_stereo_left() const;
};

/// Base views as indices into the track's observations.
struct BaseViewPair {
  std::size_t alpha = 0;
  std::size_t beta = 0;
  double theta = 0.0;
};

struct VisionOptions {
  double min_parallax = 1e-4;
  double eps_depth = 1e-6;
  bool calibrate_extrinsics = true;
};

struct DegenerateTrack : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheiralityViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegeneratePair : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// x_target = R * x_source + t between two camera frames.
struct RelativePose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

Pose camera_pose(const FullState& state, const ViewId& view);

RelativePose relative_camera_pose(const Pose& body_source, const CameraExtrinsic& ext_source,
                                  const Pose& body_target, const CameraExtrinsic& ext_target);

RelativePose relative_camera_pose(const FullState& state, const ViewId& source,
                                  const ViewId& target);

/// theta = || [p_b x] R_ba p_a || with homogeneous normalized rays.
double parallax(const Vec3& p_a, const Vec3& p_b, const Mat3& R_ba);

/// Pair of observations with the largest parallax. alpha is the smaller view id
/// (clones order before keyframes), which makes the choice deterministic.
BaseViewPair select_base_views(const FeatureTrack& track, const FullState& state,
                               const VisionOptions& opts = {});

/// Pose-only landmark position in the target camera, scaled by the base parallax:
///   ||[t_ba x] p_b|| R_ia p_a + ||[p_b x] R_ba p_a|| t_ia
Vec3 po_project(const FeatureTrack& track, const FullState& state, std::size_t target,
                const BaseViewPair& base, const VisionOptions& opts = {});

/// Perspective-divided prediction minus the measured coordinates.
Vec2 landmark_residual(const FeatureTrack& track, const FullState& state, std::size_t target,
                       const BaseViewPair& base, const VisionOptions& opts = {});

/// d(landmark_residual)/d(error state), 2 x error_dim. Only the target, alpha and
/// beta pose blocks and (when calibrating) the extrinsic block are non-zero.
Eigen::MatrixXd landmark_jacobian(const FeatureTrack& track, const FullState& state,
                                  std::size_t target, const BaseViewPair& base,
                                  const VisionOptions& opts = {});

/// d(landmark_residual)/d(observation coordinates), 2 x 2N in observation order.
Eigen::MatrixXd landmark_observation_jacobian(const FeatureTrack& track, const FullState& state,
                                              std::size_t target, const BaseViewPair& base,
                                              const VisionOptions& opts = {});

/// Depth of the gamma ray from one partner view:
///   ||[t_ig x] p_i|| / ||[p_i x] R_ig p_g||
double two_view_depth(const Vec3& p_gamma, const Vec3& p_i, const Mat3& R_i_gamma,
                      const Vec3& t_i_gamma, double min_parallax = 1e-4);

struct FusedDepth {
  double depth = 0.0;
  std::vector<std::size_t> partners;  // observation indices
  std::vector<double> weights;        // parallax weights, sum to one
  std::vector<double> depths;         // two-view depths per partner
};

/// Parallax-weighted average of the two-view depths of the canonical ray against
/// every observation from another frame. Degenerate partners are skipped.
FusedDepth fused_ray_depth(const FeatureTrack& track, const FullState& state,
                           std::size_t canonical, const VisionOptions& opts = {});

/// Left-ray depth from a stereo pair through the fixed left-to-right transform.
double stereo_depth(const Vec3& p_left, const Vec3& p_right, const ExtrinsicState& extr,
                    double min_parallax = 1e-4);

/// Fused multi-view depth minus stereo depth at the canonical (left) view.
double ray_residual(const FeatureTrack& track, const FullState& state, std::size_t canonical,
                    const VisionOptions& opts = {});

/// d(ray_residual)/d(error state), 1 x error_dim.
Eigen::RowVectorXd ray_jacobian(const FeatureTrack& track, const FullState& state,
                                std::size_t canonical, const VisionOptions& opts = {});

/// d(ray_residual)/d(observation coordinates), 1 x 2N.
Eigen::RowVectorXd ray_observation_jacobian(const FeatureTrack& track, const FullState& state,
                                            std::size_t canonical,
                                            const VisionOptions& opts = {});

}  // namespace spvins
