#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "spvins/ransac.hpp"
#include "spvins/state.hpp"
#include "spvins/update.hpp"
#include "spvins/vision.hpp"

namespace spvins {

using AssociationKey = std::int64_t;

/// A 2D keypoint of a keyframe. There is deliberately no depth or 3D field:
/// the map is keyframe poses plus image measurements only.
struct Keypoint {
  AssociationKey key = -1;
  Vec2 left = Vec2::Zero();
  std::optional<Vec2> right;
  TrackId track = -1;  // live track the keypoint came from, if any
};

struct KeyframeRecord {
  KeyframeId keyframe_id = 0;
  FrameId frame_id = 0;
  double timestamp = 0.0;
  std::vector<Keypoint> keypoints;

  const Keypoint* find(AssociationKey key) const;
};

struct MapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Keyframe database with a covisibility graph weighted by shared keys.
class ImplicitMap {
 public:
  void add(KeyframeRecord record);
  void remove(KeyframeId id);

  bool contains(KeyframeId id) const { return records_.count(id) > 0; }
  const KeyframeRecord& record(KeyframeId id) const;
  const std::map<KeyframeId, KeyframeRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  /// Number of association keys shared by two keyframes.
  int shared(KeyframeId a, KeyframeId b) const;
  /// Neighbours with their shared counts.
  const std::map<KeyframeId, int>& neighbours(KeyframeId id) const;
  /// Keyframes whose records contain the key.
  std::vector<KeyframeId> observers(AssociationKey key) const;

  void write(std::ostream& os) const;

 private:
  std::map<KeyframeId, KeyframeRecord> records_;
  std::map<KeyframeId, std::map<KeyframeId, int>> graph_;
  std::unordered_map<AssociationKey, std::vector<KeyframeId>> index_;
};

/// Evicts the keyframe with the fewest covisibility links, oldest first on ties.
KeyframeEvictionPolicy fewest_links_policy(const ImplicitMap& map);

/// Promotes a clone to a keyframe and stores its record, evicting state pose and
/// record together when the budget is full. Returns the evicted id, if any.
std::optional<KeyframeId> add_keyframe(FullState& state, Covariance& cov, ImplicitMap& map,
                                       KeyframeRecord record, std::size_t max_keyframes);

struct FrameStats {
  double mean_parallax_vs_last_kf = 0.0;  // rad
  int n_tracked = 0;
  double mean_pose_delta_vs_covis = 0.0;  // m, against covisible window frames
};

struct KeyframeThresholds {
  double parallax = 0.1;
  int min_tracked = 30;
  double pose_delta = 1.5;
};

/// True when any of the three novelty conditions fires.
bool keyframe_decision(const FrameStats& stats, const KeyframeThresholds& thresholds);

struct Correspondence {
  Vec2 query = Vec2::Zero();
  Vec2 match = Vec2::Zero();
  std::size_t query_index = 0;  // keypoint index in the query record
  std::size_t match_index = 0;  // keypoint index in the match record
  TrackId query_track = -1;     // live track behind the query keypoint
};

struct LoopCandidate {
  KeyframeId query = 0;
  KeyframeId match = 0;
  double score = 0.0;
  std::vector<Correspondence> correspondences;
};

struct LoopDetectorOptions {
  double min_time_gap = 10.0;   // s between query and match
  int min_shared = 20;
  int max_candidates = 3;
  double false_positive_rate = 0.0;
  std::uint64_t seed = 7;
};

class LoopDetector {
 public:
  virtual ~LoopDetector() = default;
  /// Candidates sorted by descending score. Matches are strictly older than the
  /// query and separated from it by the configured time gap.
  virtual std::vector<LoopCandidate> detect(const KeyframeRecord& query, const ImplicitMap& map) = 0;
};

/// Matches keypoints through their association keys. Optionally injects random
/// candidates with shuffled correspondences to exercise verification.
class AssociationKeyDetector : public LoopDetector {
 public:
  explicit AssociationKeyDetector(LoopDetectorOptions opts) : opts_(opts), rng_(opts.seed) {}
  std::vector<LoopCandidate> detect(const KeyframeRecord& query, const ImplicitMap& map) override;

 private:
  LoopDetectorOptions opts_;
  std::mt19937_64 rng_;
};

/// One line of a loop-match file.
struct LoopMatchRow {
  FrameId query_frame = 0;
  KeyframeId match_keyframe = 0;
  Vec2 query_uv = Vec2::Zero();
  Vec2 match_uv = Vec2::Zero();
};

/// Replays precomputed matches. Correspondences are bound to keypoints by
/// nearest coordinates within `snap` normalized units.
class FileLoopDetector : public LoopDetector {
 public:
  FileLoopDetector(std::vector<LoopMatchRow> rows, LoopDetectorOptions opts, double snap = 1e-6);
  std::vector<LoopCandidate> detect(const KeyframeRecord& query, const ImplicitMap& map) override;

 private:
  std::multimap<FrameId, LoopMatchRow> rows_;
  LoopDetectorOptions opts_;
  double snap_;
};

struct VerifyOptions {
  RansacOptions ransac;
  int min_inliers = 20;
  VisionOptions vision;
};

struct VerifiedLoop {
  LoopCandidate candidate;
  std::vector<std::size_t> inliers;  // indices into candidate.correspondences
  CameraFromWorld query_from_match;  // query left camera from match left camera
  int step1_inliers = 0;
};

/// Two-step verification: essential-matrix RANSAC on the 2D-2D pairs, then the
/// survivors are lifted to transient 3D points in the match camera (stereo
/// depth, else fused depth over other keyframes seeing the key) and checked by
/// PnP RANSAC against the query. Returns nothing when either step leaves fewer
/// than `min_inliers`.
std::optional<VerifiedLoop> geometric_verify(const LoopCandidate& candidate, const FullState& state,
                                             const ImplicitMap& map, const VerifyOptions& opts);

/// The match plus keyframes sharing at least `min_shared` keys with it, by
/// descending shared count (the match first).
std::vector<KeyframeId> covisible_keyframes(KeyframeId match, const ImplicitMap& map,
                                            int min_shared = 10);

/// Map-based residuals for a verified loop: each inlier's live track is joined
/// with the keyframe observations of the same landmark, base views are chosen
/// over clones and keyframes together, and reprojection rows are formed at the
/// clone views. Returns the batch and the live tracks it consumed.
struct MapMeasurement {
  MeasurementBatch batch;
  std::vector<TrackId> consumed;
};

MapMeasurement map_residual_batch(const VerifiedLoop& loop, std::span<const FeatureTrack> live_tracks,
                                  const std::vector<KeyframeId>& loop_keyframes,
                                  const FullState& state, const ImplicitMap& map,
                                  const ResidualPolicy& policy);

/// Joined clone + keyframe track for one keypoint of the match keyframe.
FeatureTrack map_track(const FeatureTrack& live, const Keypoint& match_kp,
                       const std::vector<KeyframeId>& loop_keyframes, const FullState& state,
                       const ImplicitMap& map, double sigma);

}  // namespace spvins
