#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spvins/loop_closure.hpp"
#include "spvins/propagation.hpp"
#include "spvins/state.hpp"
#include "spvins/vision.hpp"

namespace spvins {

enum class TrajectoryKind { Circle, FigureEight, WaypointSpline };

TrajectoryKind parse_trajectory_kind(const std::string& s);
std::string to_string(TrajectoryKind kind);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  double duration = 60.0;  // s
  double speed = 2.0;      // mean speed, m/s; zero gives a static body
  bool loop_revisit = true;  // two laps when set, otherwise 0.9 of a lap
  std::uint64_t seed = 1;
  double height = 1.5;        // m
  double vertical_amplitude = 0.3;  // m
  double attitude_wobble = 0.08;    // rad, roll/pitch amplitude
};

/// Exact kinematics at one instant. `specific_force` is what an ideal
/// accelerometer reads: R^T (a - g).
struct Kinematics {
  double t = 0.0;
  Pose pose;  // body in global
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Vec3 omega_body = Vec3::Zero();
  Vec3 specific_force = Vec3::Zero();
};

/// Periodic analytic path; one lap is a full turn of the phase angle. Yaw follows
/// the horizontal heading, roll and pitch wobble periodically with the phase.
class Trajectory {
 public:
  explicit Trajectory(const TrajectorySpec& spec, Vec3 gravity = default_gravity());

  Kinematics at(double t) const;
  double duration() const { return spec_.duration; }
  double lap_time() const;
  const TrajectorySpec& spec() const { return spec_; }

 private:
  struct Shape {
    Vec3 f, df, ddf;  // position and derivatives with respect to the phase
  };
  Shape shape(double phase) const;

  TrajectorySpec spec_;
  Vec3 gravity_;
  double scale_ = 1.0;
  double rate_ = 0.0;  // phase rate, rad/s
  std::vector<Vec3> waypoints_;
};

/// Same as Trajectory::at; kept as a free function for callers that want the
/// generator vocabulary.
inline Kinematics gen_groundtruth(const Trajectory& traj, double t) { return traj.at(t); }

struct WorldSpec {
  int n_landmarks = 600;
  double margin = 8.0;        // horizontal expansion of the path's bounding box, m
  double z_min = -1.0;        // m
  double z_max = 5.0;         // m
  double min_path_distance = 2.0;  // m
  ExtrinsicState extrinsics = default_extrinsics();
  NoiseDensities imu_noise;
  double pixel_sigma = kDefaultPixelSigma;  // normalized units
  double outlier_rate = 0.0;
  Vec3 initial_gyro_bias = Vec3::Zero();
  Vec3 initial_accel_bias = Vec3::Zero();
  double imu_rate = 200.0;    // Hz
  double camera_rate = 10.0;  // Hz
  double min_depth = 0.3;
  double max_depth = 50.0;
  double max_coordinate = 1.5;

  /// Forward-looking stereo pair: camera z along body x, 0.11 m baseline.
  static ExtrinsicState default_extrinsics(double baseline = 0.11);
};

struct SimObservation {
  FrameId frame = 0;
  Eye eye = Eye::Left;
  TrackId track = 0;
  Vec2 uv = Vec2::Zero();
  bool outlier = false;
};

struct SimFrame {
  FrameId id = 0;
  std::int64_t timestamp_ns = 0;
};

struct GroundTruthSample {
  std::int64_t timestamp_ns = 0;
  ImuState state;  // pose, velocity and biases
};

struct SimulatedDataset {
  std::vector<std::int64_t> imu_timestamps_ns;
  std::vector<ImuSample> imu;
  std::vector<SimFrame> frames;
  std::vector<SimObservation> observations;  // ordered by frame, track, eye
  std::map<TrackId, AssociationKey> associations;
  std::vector<Vec3> landmarks;
  std::vector<GroundTruthSample> groundtruth;  // one per frame
  ExtrinsicState extrinsics;
};

double ns_to_seconds(std::int64_t ns);

std::vector<Vec3> generate_landmarks(const Trajectory& traj, const WorldSpec& world,
                                     std::uint64_t seed);

/// IMU stream at world.imu_rate over [0, duration]: true rates + bias + white
/// noise, with biases following the random walk of the error-state model.
/// Ground-truth biases at every sample are returned through `biases` when given.
std::vector<ImuSample> sim_imu(const Trajectory& traj, const WorldSpec& world, std::uint64_t seed,
                               std::vector<std::int64_t>* timestamps_ns = nullptr,
                               std::vector<std::pair<Vec3, Vec3>>* biases = nullptr);

/// Complete synthetic dataset: IMU, frames, stereo tracks and ground truth.
/// Track ids change whenever a landmark leaves the left image; association
/// keys are landmark ids and therefore stable across revisits.
SimulatedDataset simulate(const TrajectorySpec& spec, const WorldSpec& world);

/// Writes imu.csv, frames.csv, tracks.csv, associations.csv, outliers.csv,
/// landmarks.csv, calibration.csv, groundtruth.txt and groundtruth_state.csv.
void write_dataset(const SimulatedDataset& data, const std::filesystem::path& dir);

}  // namespace spvins
