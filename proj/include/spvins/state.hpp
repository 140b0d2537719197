#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "spvins/geometry.hpp"

namespace spvins {

using FrameId = std::int64_t;
using KeyframeId = std::int64_t;
using Covariance = Eigen::MatrixXd;

struct ImuState {
  Quat q_GB = Quat::Identity();
  Vec3 v_GB = Vec3::Zero();
  Vec3 p_GB = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();

  Pose pose() const { return {q_GB.toRotationMatrix(), p_GB}; }
};

struct PoseClone {
  Quat q_GB = Quat::Identity();
  Vec3 p_GB = Vec3::Zero();
  double timestamp = 0.0;
  FrameId frame_id = 0;

  Pose pose() const { return {q_GB.toRotationMatrix(), p_GB}; }
};

enum class Eye : std::uint8_t { Left = 0, Right = 1 };

/// Body-to-camera rotation and the body origin expressed in the camera frame.
struct CameraExtrinsic {
  Quat q_CB = Quat::Identity();
  Vec3 p_CB = Vec3::Zero();

  Mat3 R_CB() const { return q_CB.toRotationMatrix(); }
  /// Camera pose in the body frame.
  Pose body_from_camera() const;
  /// Camera pose in the global frame given the body pose.
  Pose camera_pose(const Pose& body) const { return body * body_from_camera(); }
};

struct ExtrinsicState {
  CameraExtrinsic left;
  CameraExtrinsic right;

  const CameraExtrinsic& operator[](Eye eye) const { return eye == Eye::Left ? left : right; }
  CameraExtrinsic& operator[](Eye eye) { return eye == Eye::Left ? left : right; }
};

struct KeyframePose {
  Quat q_GB = Quat::Identity();
  Vec3 p_GB = Vec3::Zero();
  KeyframeId keyframe_id = 0;
  FrameId frame_id = 0;
  double timestamp = 0.0;

  Pose pose() const { return {q_GB.toRotationMatrix(), p_GB}; }
};

enum class PoseKind : std::uint8_t { Clone = 0, Keyframe = 1 };

/// Names a pose block of the state: a clone by frame id or a keyframe by keyframe id.
struct PoseHandle {
  PoseKind kind = PoseKind::Clone;
  std::int64_t id = 0;

  static PoseHandle clone(FrameId id) { return {PoseKind::Clone, id}; }
  static PoseHandle keyframe(KeyframeId id) { return {PoseKind::Keyframe, id}; }
  auto operator<=>(const PoseHandle&) const = default;
};

std::ostream& operator<<(std::ostream& os, const PoseHandle& h);

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Error-state layout. Within the inertial block: [phi, dv_st, dp_st, dbg, dba].
// Every clone and keyframe block is [phi, dp_st]; the extrinsic block is
// [phi_L, dp_L, phi_R, dp_R].
namespace layout {
inline constexpr int kImuDim = 15;
inline constexpr int kPoseDim = 6;
inline constexpr int kExtrinsicDim = 12;
inline constexpr int kRot = 0;
inline constexpr int kVel = 3;
inline constexpr int kPos = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
}  // namespace layout

struct StateOptions {
  std::size_t max_clones = 11;
  std::size_t max_keyframes = 200;
};

class FullState {
 public:
  ImuState imu;
  std::vector<PoseClone> clones;
  ExtrinsicState extrinsics;
  std::vector<KeyframePose> keyframes;

  int error_dim() const {
    return layout::kImuDim + layout::kPoseDim * static_cast<int>(clones.size()) +
           layout::kExtrinsicDim + layout::kPoseDim * static_cast<int>(keyframes.size());
  }
  int clone_offset(std::size_t index) const {
    return layout::kImuDim + layout::kPoseDim * static_cast<int>(index);
  }
  int extrinsic_offset() const { return clone_offset(clones.size()); }
  int extrinsic_offset(Eye eye) const { return extrinsic_offset() + (eye == Eye::Left ? 0 : 6); }
  int keyframe_offset(std::size_t index) const {
    return extrinsic_offset() + layout::kExtrinsicDim + layout::kPoseDim * static_cast<int>(index);
  }

  std::optional<std::size_t> clone_index(FrameId id) const;
  std::optional<std::size_t> keyframe_index(KeyframeId id) const;

  bool contains(const PoseHandle& h) const;
  /// Body pose named by the handle. Throws StateError when absent.
  Pose pose(const PoseHandle& h) const;
  /// Column offset of the handle's [phi, dp_st] block. Throws StateError when absent.
  int pose_offset(const PoseHandle& h) const;
  double timestamp(const PoseHandle& h) const;
};

/// Appends a clone of the current IMU pose. When the window already holds
/// `max_clones` clones the oldest is marginalized first.
void augment_clone(FullState& state, Covariance& cov, FrameId frame_id, double timestamp,
                   std::size_t max_clones);

void marginalize_oldest_clone(FullState& state, Covariance& cov);
void marginalize_clone(FullState& state, Covariance& cov, FrameId frame_id);

/// Chooses which keyframe to drop when the keyframe budget is full.
using KeyframeEvictionPolicy = std::function<KeyframeId(const FullState&)>;

/// Copies a clone into the keyframe states. The new block and its cross terms are
/// copied from the clone's rows. When the budget would be exceeded, the keyframe
/// picked by `evict` (oldest by default) is removed first.
KeyframeId promote_clone_to_keyframe(FullState& state, Covariance& cov, FrameId clone_frame_id,
                                     KeyframeId new_id, std::size_t max_keyframes,
                                     const KeyframeEvictionPolicy& evict = {});

void remove_keyframe(FullState& state, Covariance& cov, KeyframeId id);

/// x <- x (+) delta. Orientation blocks use the exact exponential; velocity and
/// position follow the group action v = Exp(phi) v_est + dv_st.
void inject_correction(FullState& state, const Eigen::VectorXd& delta);

/// Inverse of inject_correction: the delta such that inject(estimate, delta) == truth.
/// Both states must share the same clone and keyframe structure.
Eigen::VectorXd extract_error(const FullState& truth, const FullState& estimate);

void symmetrize(Covariance& cov);

/// Removes rows/cols [start, start+count).
void erase_block(Covariance& cov, int start, int count);

/// Inserts `count` rows/cols at `start` filled with zeros.
void insert_block(Covariance& cov, int start, int count);

/// Indices of the (phi, dp_st) rows of the inertial block.
inline constexpr int kImuPoseIndex[6] = {0, 1, 2, 6, 7, 8};

/// One "timestamp tx ty tz qx qy qz qw" line.
void write_pose_line(std::ostream& os, double timestamp, const Quat& q, const Vec3& p);

}  // namespace spvins
