#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "spvins/state.hpp"
#include "spvins/vision.hpp"

namespace spvins {

enum class RowSource : std::uint8_t { Uv, Ray, Map, Mixed };

/// Stacked EKF measurement: innovation r ~ H dx + n with n ~ N(0, diag(noise)).
/// Rows of one track are contiguous and share a track id.
struct MeasurementBatch {
  Eigen::VectorXd r;
  Eigen::MatrixXd H;
  Eigen::VectorXd noise;
  std::vector<RowSource> sources;
  std::vector<TrackId> tracks;

  static MeasurementBatch empty(int error_dim);
  int rows() const { return static_cast<int>(r.size()); }
  int count(RowSource s) const;
  int track_count() const;
  void append(const MeasurementBatch& other);
  /// Stacks many batches with a single allocation.
  static MeasurementBatch concat(const std::vector<MeasurementBatch>& parts, int error_dim);
  /// Rows [begin, end) as a new batch.
  MeasurementBatch slice(int begin, int end) const;
};

struct ResidualPolicy {
  VisionOptions vision;
  bool use_ray = true;
  /// Ray rows whose first-order standard deviation exceeds this fraction of the
  /// stereo depth are replaced by a reprojection row: depth from a short
  /// baseline is too nonlinear in the pixels for a linearized update.
  double max_ray_relative_sigma = 0.05;
  /// Keyframe keypoints re-enter every loop update that touches them while the
  /// filter treats each use as fresh; their pixel sigma is scaled by this.
  double map_keypoint_sigma_scale = 1.5;
};

enum class TargetSet : std::uint8_t { All, ClonesOnly };

/// Residual rows of a single track, whitened with the first-order propagated
/// observation noise so that the returned noise is one per row. Tracks with a
/// stereo pair at their newest frame contribute one ray row at that left view
/// plus reprojection rows at all other views; other tracks contribute
/// reprojection rows only. The alpha base view has an identically zero
/// residual and is never a target; at the beta view only the component normal
/// to the epipolar line is informative, so it contributes a single row.
/// Returns an empty batch for degenerate tracks.
MeasurementBatch track_measurement(const FeatureTrack& track, const FullState& state,
                                   const ResidualPolicy& policy, RowSource uv_tag = RowSource::Uv,
                                   TargetSet targets = TargetSet::All);

MeasurementBatch build_batch(std::span<const FeatureTrack> tracks, const FullState& state,
                             const ResidualPolicy& policy);

struct GateOptions {
  double level = 0.95;
};

/// Per-track Mahalanobis test; tracks that fail are removed whole.
MeasurementBatch chi2_gate(const MeasurementBatch& batch, const Covariance& cov,
                           const GateOptions& opts = {});

double chi2_quantile(double level, int dof);

/// Thin-QR compression of the whitened system when it has more rows than
/// non-zero columns. The posterior is unchanged.
MeasurementBatch compress(const MeasurementBatch& batch);

struct UpdateReport {
  double timestamp = 0.0;
  int n_uv_rows = 0;
  int n_ray_rows = 0;
  int n_map_rows = 0;
  int accepted_tracks = 0;
  int rejected_tracks = 0;
  double residual_rms = 0.0;
  bool conditioning_failure = false;

  void merge(const UpdateReport& other);
};

/// "timestamp, n_uv_rows, n_ray_rows, n_map_rows, residual_rms, cond_flag"
void write_report_line(std::ostream& os, const UpdateReport& report);

/// Standard EKF step with a Joseph-form covariance update and the state's
/// correction rule. Leaves the estimate untouched when the innovation covariance
/// cannot be factored.
UpdateReport ekf_update(FullState& state, Covariance& cov, const MeasurementBatch& batch);

/// Gate, compress and update; row counts are taken after gating.
UpdateReport gated_update(FullState& state, Covariance& cov, const MeasurementBatch& batch,
                          const GateOptions& opts = {});

}  // namespace spvins
