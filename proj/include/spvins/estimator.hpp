#pragma once

#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "spvins/loop_closure.hpp"
#include "spvins/propagation.hpp"
#include "spvins/state.hpp"
#include "spvins/update.hpp"
#include "spvins/vision.hpp"

namespace spvins {

struct InitialSigmas {
  double attitude = 1e-3;         // rad
  double velocity = 1e-2;         // m/s
  double position = 1e-3;         // m
  double gyro_bias = 1e-3;        // rad/s
  double accel_bias = 1e-2;       // m/s^2
  double extrinsic_rotation = 0.035;    // rad
  double extrinsic_translation = 0.02;  // m
};

struct EstimatorOptions {
  StateOptions state;
  NoiseDensities imu_noise;
  Vec3 gravity = default_gravity();
  double pixel_sigma = kDefaultPixelSigma;
  ResidualPolicy residuals;  // use_ray toggles the ray residual; vision carries calibration
  GateOptions gate;
  InitialSigmas initial;
  /// Relinearizations of the window update (1 is the plain EKF). Extra passes
  /// run only while some component of the correction moves by more than
  /// update_tolerance (rad or m).
  int update_iterations = 3;
  double update_tolerance = 1e-2;

  bool enable_loop_closure = true;
  KeyframeThresholds keyframe;
  LoopDetectorOptions loop;
  VerifyOptions verify;
  int covisible_min_shared = 10;
  int loop_query_interval = 5;  // frames between loop queries
};

struct FrameObservation {
  TrackId track = 0;
  Eye eye = Eye::Left;
  Vec2 uv = Vec2::Zero();
};

using Mat6 = Eigen::Matrix<double, 6, 6>;

struct FrameResult {
  FrameId frame = 0;
  double timestamp = 0.0;
  Pose pose;
  Mat6 pose_covariance = Mat6::Zero();  // [phi, p] of the inertial block
  UpdateReport report;
  bool keyframe = false;
  std::optional<KeyframeId> evicted;
  int loops = 0;  // verified loops applied at this frame
};

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Sliding-window filter over clones plus the keyframe map. Feed IMU samples
/// in time order, then each image frame once its IMU interval is covered.
class Estimator {
 public:
  Estimator(EstimatorOptions opts, const ImuState& initial, double t0, const ExtrinsicState& extrinsics,
            std::map<TrackId, AssociationKey> associations = {},
            std::unique_ptr<LoopDetector> detector = nullptr);

  void add_imu(const ImuSample& s);
  FrameResult process_frame(FrameId frame, double timestamp, const std::vector<FrameObservation>& obs);

  const FullState& state() const { return state_; }
  const Covariance& covariance() const { return cov_; }
  const ImplicitMap& map() const { return map_; }
  double time() const { return t_; }

 private:
  std::vector<FeatureTrack> select_for_update(FrameId frame);
  UpdateReport window_update(const std::vector<FeatureTrack>& tracks);
  void keyframe_stage(FrameId frame, double timestamp, FrameResult& out);
  void loop_stage(FrameId frame, double timestamp, FrameResult& out);
  KeyframeRecord current_record(FrameId frame, double timestamp) const;
  FrameStats frame_stats(FrameId frame) const;
  void check_finite() const;

  EstimatorOptions opts_;
  FullState state_;
  Covariance cov_;
  ImuPropagator propagator_;
  double t_ = 0.0;
  std::map<TrackId, FeatureTrack> live_;
  std::map<TrackId, AssociationKey> associations_;
  ImplicitMap map_;
  std::unique_ptr<LoopDetector> detector_;
  KeyframeId next_keyframe_ = 0;
  std::optional<KeyframeId> last_keyframe_;
  std::size_t frames_seen_ = 0;
};

}  // namespace spvins
