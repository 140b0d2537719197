#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spvins/loop_closure.hpp"
#include "spvins/propagation.hpp"
#include "spvins/state.hpp"

namespace spvins {

/// Malformed or missing input. The message carries the file and line number.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ImuRecord {
  std::int64_t timestamp_ns = 0;
  ImuSample sample;
};

struct FrameRecord {
  FrameId id = 0;
  std::int64_t timestamp_ns = 0;
};

struct TrackRecord {
  FrameId frame = 0;
  Eye eye = Eye::Left;
  TrackId track = 0;
  Vec2 uv = Vec2::Zero();
};

struct TrajectoryPoint {
  double timestamp = 0.0;
  Quat q = Quat::Identity();
  Vec3 p = Vec3::Zero();

  Pose pose() const { return {q.toRotationMatrix(), p}; }
};

struct StateRecord {
  std::int64_t timestamp_ns = 0;
  ImuState state;
};

/// "timestamp_ns, wx, wy, wz, ax, ay, az"; timestamps strictly increasing.
std::vector<ImuRecord> read_imu_csv(const std::filesystem::path& path);
/// "frame_id, timestamp_ns"
std::vector<FrameRecord> read_frames_csv(const std::filesystem::path& path);
/// "frame_id, eye, track_id, u, v" with eye 0 (left) or 1 (right).
std::vector<TrackRecord> read_tracks_csv(const std::filesystem::path& path);
/// "track_id, association_key"
std::map<TrackId, AssociationKey> read_associations_csv(const std::filesystem::path& path);
/// "eye, qw, qx, qy, qz, px, py, pz"
ExtrinsicState read_calibration_csv(const std::filesystem::path& path);
/// "timestamp_ns, p(3), q wxyz(4), v(3), bg(3), ba(3)"
std::vector<StateRecord> read_state_csv(const std::filesystem::path& path);
/// "query_frame_id, match_keyframe_id, query_u, query_v, match_u, match_v"
std::vector<LoopMatchRow> read_loop_matches_csv(const std::filesystem::path& path);
/// Whitespace separated "timestamp tx ty tz qx qy qz qw" lines.
std::vector<TrajectoryPoint> read_trajectory(const std::filesystem::path& path);

/// "timestamp, c00, c01, ..., c55": row-major 6x6 pose covariances.
std::vector<std::pair<double, Eigen::Matrix<double, 6, 6>>> read_pose_covariances(
    const std::filesystem::path& path);

void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& traj);

}  // namespace spvins
