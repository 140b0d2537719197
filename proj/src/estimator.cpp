#include "spvins/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace spvins {

namespace {

bool observed_in(const FeatureTrack& t, FrameId frame) {
  for (const NormalizedObservation& o : t.observations) {
    if (o.view.frame == PoseHandle::clone(frame)) return true;
  }
  return false;
}

int distinct_frames(const FeatureTrack& t) {
  std::set<PoseHandle> frames;
  for (const NormalizedObservation& o : t.observations) frames.insert(o.view.frame);
  return static_cast<int>(frames.size());
}

double angle_between(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

}  // namespace

Estimator::Estimator(EstimatorOptions opts, const ImuState& initial, double t0,
                     const ExtrinsicState& extrinsics, std::map<TrackId, AssociationKey> associations,
                     std::unique_ptr<LoopDetector> detector)
    : opts_(std::move(opts)),
      propagator_(opts_.imu_noise, opts_.gravity),
      t_(t0),
      associations_(std::move(associations)),
      detector_(std::move(detector)) {
  state_.imu = initial;
  state_.extrinsics = extrinsics;
  cov_ = Covariance::Zero(state_.error_dim(), state_.error_dim());
  const InitialSigmas& s = opts_.initial;
  auto set = [&](int offset, double sigma) {
    for (int i = 0; i < 3; ++i) cov_(offset + i, offset + i) = sigma * sigma;
  };
  set(layout::kRot, s.attitude);
  set(layout::kVel, s.velocity);
  set(layout::kPos, s.position);
  set(layout::kBg, s.gyro_bias);
  set(layout::kBa, s.accel_bias);
  if (opts_.residuals.vision.calibrate_extrinsics) {
    for (Eye e : {Eye::Left, Eye::Right}) {
      set(state_.extrinsic_offset(e), s.extrinsic_rotation);
      set(state_.extrinsic_offset(e) + 3, s.extrinsic_translation);
    }
  }
  if (opts_.enable_loop_closure && !detector_) {
    detector_ = std::make_unique<AssociationKeyDetector>(opts_.loop);
  }
}

void Estimator::add_imu(const ImuSample& s) { propagator_.add_sample(s); }

FrameResult Estimator::process_frame(FrameId frame, double timestamp,
                                     const std::vector<FrameObservation>& obs) {
  FrameResult out;
  out.frame = frame;
  out.timestamp = timestamp;
  out.report.timestamp = timestamp;

  if (timestamp > t_) propagator_.propagate(state_, cov_, t_, timestamp);
  t_ = timestamp;
  propagator_.prune(t_);
  // One extra slot: the oldest clone is used by the update before it goes.
  augment_clone(state_, cov_, frame, timestamp, opts_.state.max_clones + 1);

  for (const FrameObservation& o : obs) {
    FeatureTrack& t = live_[o.track];
    t.id = o.track;
    t.observations.push_back({{PoseHandle::clone(frame), o.eye}, o.uv, opts_.pixel_sigma});
  }

  const std::vector<FeatureTrack> used = select_for_update(frame);
  if (!used.empty()) out.report.merge(window_update(used));

  if (opts_.enable_loop_closure) loop_stage(frame, timestamp, out);

  while (state_.clones.size() > opts_.state.max_clones) {
    const PoseHandle oldest = PoseHandle::clone(state_.clones.front().frame_id);
    for (auto& [id, t] : live_) {
      std::erase_if(t.observations, [&](const NormalizedObservation& o) { return o.view.frame == oldest; });
    }
    marginalize_oldest_clone(state_, cov_);
  }

  if (opts_.enable_loop_closure) keyframe_stage(frame, timestamp, out);

  check_finite();
  out.pose = state_.imu.pose();
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) out.pose_covariance(i, j) = cov_(kImuPoseIndex[i], kImuPoseIndex[j]);
  }
  ++frames_seen_;
  return out;
}

std::vector<FeatureTrack> Estimator::select_for_update(FrameId frame) {
  // Tracks that ended, plus tracks reaching back to the clone about to leave.
  const bool window_full = state_.clones.size() > opts_.state.max_clones;
  const PoseHandle oldest = PoseHandle::clone(state_.clones.front().frame_id);
  std::vector<FeatureTrack> used;
  for (auto it = live_.begin(); it != live_.end();) {
    FeatureTrack& t = it->second;
    const bool lost = !observed_in(t, frame);
    bool old = false;
    if (window_full) {
      for (const NormalizedObservation& o : t.observations) old = old || o.view.frame == oldest;
    }
    if ((lost || old) && distinct_frames(t) >= 2) used.push_back(t);
    if (lost) {
      it = live_.erase(it);
      continue;
    }
    // Observations are used once; the track keeps going from the next frame.
    if (old) t.observations.clear();
    ++it;
  }
  return used;
}

UpdateReport Estimator::window_update(const std::vector<FeatureTrack>& tracks) {
  const MeasurementBatch batch = build_batch(tracks, state_, opts_.residuals);
  if (opts_.update_iterations <= 1) return gated_update(state_, cov_, batch, opts_.gate);

  // Iterated form: the gate is applied once, then the kept tracks are
  // relinearized about each new estimate while the prior stays at (x0, P0).
  MeasurementBatch b = chi2_gate(batch, cov_, opts_.gate);
  UpdateReport report;
  report.n_uv_rows = b.count(RowSource::Uv);
  report.n_ray_rows = b.count(RowSource::Ray);
  report.n_map_rows = b.count(RowSource::Map);
  report.accepted_tracks = b.track_count();
  report.rejected_tracks = batch.track_count() - report.accepted_tracks;
  if (b.rows() == 0) return report;
  const std::set<TrackId> kept(b.tracks.begin(), b.tracks.end());
  std::vector<FeatureTrack> kept_tracks;
  for (const FeatureTrack& t : tracks) {
    if (kept.count(t.id)) kept_tracks.push_back(t);
  }

  const FullState x0 = state_;
  const Covariance P0 = cov_;
  FullState x = x0;
  Covariance P = P0;
  for (int it = 0; it < opts_.update_iterations; ++it) {
    if (it > 0) b = build_batch(kept_tracks, x, opts_.residuals);
    MeasurementBatch shifted = b;
    shifted.r += b.H * extract_error(x, x0);
    FullState next = x0;
    P = P0;
    const UpdateReport core = ekf_update(next, P, compress(shifted));
    report.residual_rms = core.residual_rms;
    report.conditioning_failure = core.conditioning_failure;
    const double step = extract_error(next, x).lpNorm<Eigen::Infinity>();
    x = next;
    if (core.conditioning_failure || step < opts_.update_tolerance) break;
  }
  state_ = x;
  cov_ = P;
  return report;
}

KeyframeRecord Estimator::current_record(FrameId frame, double timestamp) const {
  KeyframeRecord rec;
  rec.keyframe_id = -1;
  rec.frame_id = frame;
  rec.timestamp = timestamp;
  const PoseHandle h = PoseHandle::clone(frame);
  for (const auto& [id, t] : live_) {
    const auto key = associations_.find(id);
    if (key == associations_.end()) continue;
    const auto l = t.find({h, Eye::Left});
    if (!l) continue;
    Keypoint kp;
    kp.key = key->second;
    kp.left = t.observations[*l].uv;
    if (const auto r = t.find({h, Eye::Right})) kp.right = t.observations[*r].uv;
    kp.track = id;
    rec.keypoints.push_back(kp);
  }
  return rec;
}

FrameStats Estimator::frame_stats(FrameId frame) const {
  FrameStats s;
  const PoseHandle h = PoseHandle::clone(frame);
  for (const auto& [id, t] : live_) {
    if (t.find({h, Eye::Left}) && distinct_frames(t) >= 2) ++s.n_tracked;
  }
  const KeyframeRecord cur = current_record(frame, 0.0);
  if (!last_keyframe_ || !map_.contains(*last_keyframe_)) {
    s.mean_parallax_vs_last_kf = std::numeric_limits<double>::infinity();
    return s;
  }
  // Rotation-compensated bearing change against the latest keyframe.
  const ViewId cur_view{h, Eye::Left};
  const ViewId kf_view{PoseHandle::keyframe(*last_keyframe_), Eye::Left};
  const Pose cur_cam = camera_pose(state_, cur_view), kf_cam = camera_pose(state_, kf_view);
  const Mat3 R_cur_kf = cur_cam.R.transpose() * kf_cam.R;
  const KeyframeRecord& kf = map_.record(*last_keyframe_);
  double sum = 0.0;
  int n = 0;
  for (const Keypoint& kp : cur.keypoints) {
    const Keypoint* old = kf.find(kp.key);
    if (!old) continue;
    sum += angle_between(R_cur_kf * Vec3(old->left.x(), old->left.y(), 1.0),
                         Vec3(kp.left.x(), kp.left.y(), 1.0));
    ++n;
  }
  s.mean_parallax_vs_last_kf = n > 0 ? sum / n : std::numeric_limits<double>::infinity();

  // Mean distance to the window clones that share enough tracks with this frame.
  std::map<FrameId, int> shared;
  for (const auto& [id, t] : live_) {
    if (!t.find({h, Eye::Left})) continue;
    std::set<FrameId> frames;
    for (const NormalizedObservation& o : t.observations) {
      if (o.view.frame.kind == PoseKind::Clone && o.view.frame.id != frame) frames.insert(o.view.frame.id);
    }
    for (FrameId f : frames) ++shared[f];
  }
  double dsum = 0.0;
  int nk = 0;
  for (const auto& [f, count] : shared) {
    if (count < opts_.covisible_min_shared || !state_.clone_index(f)) continue;
    dsum += (state_.pose(PoseHandle::clone(f)).t - state_.imu.p_GB).norm();
    ++nk;
  }
  s.mean_pose_delta_vs_covis = nk > 0 ? dsum / nk : 0.0;
  return s;
}

void Estimator::keyframe_stage(FrameId frame, double timestamp, FrameResult& out) {
  if (!state_.clone_index(frame)) return;
  if (!keyframe_decision(frame_stats(frame), opts_.keyframe)) return;
  KeyframeRecord rec = current_record(frame, timestamp);
  rec.keyframe_id = next_keyframe_++;
  const KeyframeId id = rec.keyframe_id;
  out.evicted = add_keyframe(state_, cov_, map_, std::move(rec), opts_.state.max_keyframes);
  out.keyframe = true;
  last_keyframe_ = id;
}

void Estimator::loop_stage(FrameId frame, double timestamp, FrameResult& out) {
  if (!detector_ || map_.size() == 0) return;
  if (frames_seen_ % static_cast<std::size_t>(std::max(opts_.loop_query_interval, 1)) != 0) return;
  const KeyframeRecord query = current_record(frame, timestamp);
  for (const LoopCandidate& cand : detector_->detect(query, map_)) {
    const auto loop = geometric_verify(cand, state_, map_, opts_.verify);
    if (!loop) continue;
    // Only keyframes from the earlier visit: recent ones repeat live measurements.
    std::vector<KeyframeId> kfs;
    for (KeyframeId k : covisible_keyframes(cand.match, map_, opts_.covisible_min_shared)) {
      if (map_.record(k).timestamp <= timestamp - opts_.loop.min_time_gap) kfs.push_back(k);
    }
    std::vector<FeatureTrack> live;
    for (const auto& [id, t] : live_) {
      if (!t.observations.empty()) live.push_back(t);
    }
    const MapMeasurement m = map_residual_batch(*loop, live, kfs, state_, map_, opts_.residuals);
    if (m.batch.rows() == 0) continue;
    out.report.merge(gated_update(state_, cov_, m.batch, opts_.gate));
    for (TrackId id : m.consumed) live_[id].observations.clear();
    ++out.loops;
    break;
  }
}

void Estimator::check_finite() const {
  if (!state_.imu.p_GB.allFinite() || !state_.imu.v_GB.allFinite() ||
      !state_.imu.q_GB.coeffs().allFinite() || !cov_.allFinite()) {
    throw NumericalFailure("state or covariance became non-finite");
  }
}

}  // namespace spvins
