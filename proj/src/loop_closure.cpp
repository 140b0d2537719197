#include "spvins/loop_closure.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

namespace spvins {

const Keypoint* KeyframeRecord::find(AssociationKey key) const {
  for (const Keypoint& kp : keypoints) {
    if (kp.key == key) return &kp;
  }
  return nullptr;
}

void ImplicitMap::add(KeyframeRecord record) {
  if (records_.count(record.keyframe_id)) {
    throw MapError("keyframe " + std::to_string(record.keyframe_id) + " already in map");
  }
  std::set<AssociationKey> keys;
  for (const Keypoint& kp : record.keypoints) {
    if (!keys.insert(kp.key).second) {
      throw MapError("duplicate association key " + std::to_string(kp.key) + " in keyframe " +
                     std::to_string(record.keyframe_id));
    }
  }
  const KeyframeId id = record.keyframe_id;
  auto& edges = graph_[id];
  for (AssociationKey key : keys) {
    auto& obs = index_[key];
    for (KeyframeId other : obs) {
      ++edges[other];
      ++graph_[other][id];
    }
    obs.push_back(id);
  }
  records_.emplace(id, std::move(record));
}

void ImplicitMap::remove(KeyframeId id) {
  auto it = records_.find(id);
  if (it == records_.end()) return;
  for (const Keypoint& kp : it->second.keypoints) {
    auto idx = index_.find(kp.key);
    if (idx == index_.end()) continue;
    auto& obs = idx->second;
    obs.erase(std::remove(obs.begin(), obs.end(), id), obs.end());
    if (obs.empty()) index_.erase(idx);
  }
  for (const auto& [other, n] : graph_[id]) graph_[other].erase(id);
  graph_.erase(id);
  records_.erase(it);
}

const KeyframeRecord& ImplicitMap::record(KeyframeId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) throw MapError("no keyframe " + std::to_string(id) + " in map");
  return it->second;
}

int ImplicitMap::shared(KeyframeId a, KeyframeId b) const {
  auto it = graph_.find(a);
  if (it == graph_.end()) return 0;
  auto e = it->second.find(b);
  return e == it->second.end() ? 0 : e->second;
}

const std::map<KeyframeId, int>& ImplicitMap::neighbours(KeyframeId id) const {
  static const std::map<KeyframeId, int> none;
  auto it = graph_.find(id);
  return it == graph_.end() ? none : it->second;
}

std::vector<KeyframeId> ImplicitMap::observers(AssociationKey key) const {
  auto it = index_.find(key);
  return it == index_.end() ? std::vector<KeyframeId>{} : it->second;
}

void ImplicitMap::write(std::ostream& os) const {
  os << std::setprecision(17);
  for (const auto& [id, rec] : records_) {
    os << "keyframe " << id << ' ' << rec.frame_id << ' ' << rec.timestamp << ' '
       << rec.keypoints.size() << '\n';
    for (const Keypoint& kp : rec.keypoints) {
      os << kp.key << ' ' << kp.left.x() << ' ' << kp.left.y();
      if (kp.right) os << ' ' << kp.right->x() << ' ' << kp.right->y();
      os << '\n';
    }
  }
}

KeyframeEvictionPolicy fewest_links_policy(const ImplicitMap& map) {
  return [&map](const FullState& state) {
    if (state.keyframes.empty()) throw StateError("no keyframe to evict");
    KeyframeId best = state.keyframes.front().keyframe_id;
    std::size_t best_links = std::numeric_limits<std::size_t>::max();
    double best_time = std::numeric_limits<double>::infinity();
    for (const KeyframePose& kf : state.keyframes) {
      const std::size_t links = map.neighbours(kf.keyframe_id).size();
      if (links < best_links || (links == best_links && kf.timestamp < best_time)) {
        best = kf.keyframe_id;
        best_links = links;
        best_time = kf.timestamp;
      }
    }
    return best;
  };
}

std::optional<KeyframeId> add_keyframe(FullState& state, Covariance& cov, ImplicitMap& map,
                                       KeyframeRecord record, std::size_t max_keyframes) {
  std::set<KeyframeId> before;
  for (const KeyframePose& kf : state.keyframes) before.insert(kf.keyframe_id);
  promote_clone_to_keyframe(state, cov, record.frame_id, record.keyframe_id, max_keyframes,
                            fewest_links_policy(map));
  std::optional<KeyframeId> evicted;
  for (KeyframeId id : before) {
    if (!state.keyframe_index(id)) {
      map.remove(id);
      evicted = id;
    }
  }
  map.add(std::move(record));
  return evicted;
}

bool keyframe_decision(const FrameStats& stats, const KeyframeThresholds& thresholds) {
  return stats.mean_parallax_vs_last_kf >= thresholds.parallax ||
         stats.n_tracked < thresholds.min_tracked ||
         stats.mean_pose_delta_vs_covis > thresholds.pose_delta;
}

namespace {

void sort_candidates(std::vector<LoopCandidate>& out) {
  std::stable_sort(out.begin(), out.end(), [](const LoopCandidate& a, const LoopCandidate& b) {
    return a.score > b.score || (a.score == b.score && a.match < b.match);
  });
}

bool eligible(const KeyframeRecord& query, const KeyframeRecord& rec, double gap) {
  return rec.timestamp < query.timestamp && query.timestamp - rec.timestamp > gap;
}

}  // namespace

std::vector<LoopCandidate> AssociationKeyDetector::detect(const KeyframeRecord& query,
                                                          const ImplicitMap& map) {
  std::vector<LoopCandidate> out;
  std::vector<KeyframeId> pool;
  for (const auto& [id, rec] : map.records()) {
    if (!eligible(query, rec, opts_.min_time_gap)) continue;
    pool.push_back(id);
    LoopCandidate c{query.keyframe_id, id, 0.0, {}};
    for (std::size_t qi = 0; qi < query.keypoints.size(); ++qi) {
      const Keypoint& q = query.keypoints[qi];
      for (std::size_t mi = 0; mi < rec.keypoints.size(); ++mi) {
        if (rec.keypoints[mi].key == q.key) {
          c.correspondences.push_back({q.left, rec.keypoints[mi].left, qi, mi, q.track});
          break;
        }
      }
    }
    c.score = static_cast<double>(c.correspondences.size());
    if (static_cast<int>(c.correspondences.size()) >= opts_.min_shared) out.push_back(std::move(c));
  }
  sort_candidates(out);
  if (static_cast<int>(out.size()) > opts_.max_candidates) out.resize(opts_.max_candidates);

  // Adversarial candidate: a random eligible keyframe with scrambled pairings.
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (opts_.false_positive_rate > 0.0 && !pool.empty() && !query.keypoints.empty() &&
      u01(rng_) < opts_.false_positive_rate) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const KeyframeRecord& rec = map.record(pool[pick(rng_)]);
    std::vector<std::size_t> qi(query.keypoints.size()), mi(rec.keypoints.size());
    std::iota(qi.begin(), qi.end(), 0);
    std::iota(mi.begin(), mi.end(), 0);
    std::shuffle(mi.begin(), mi.end(), rng_);
    LoopCandidate c{query.keyframe_id, rec.keyframe_id, 0.0, {}};
    for (std::size_t k = 0; k < std::min(qi.size(), mi.size()); ++k) {
      c.correspondences.push_back(
          {query.keypoints[qi[k]].left, rec.keypoints[mi[k]].left, qi[k], mi[k],
           query.keypoints[qi[k]].track});
    }
    c.score = 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

FileLoopDetector::FileLoopDetector(std::vector<LoopMatchRow> rows, LoopDetectorOptions opts,
                                   double snap)
    : opts_(opts), snap_(snap) {
  for (LoopMatchRow& r : rows) rows_.emplace(r.query_frame, r);
}

namespace {

std::optional<std::size_t> nearest(const std::vector<Keypoint>& kps, const Vec2& uv, double snap) {
  std::optional<std::size_t> best;
  double best_d = snap;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const double d = (kps[i].left - uv).norm();
    if (d <= best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

}  // namespace

std::vector<LoopCandidate> FileLoopDetector::detect(const KeyframeRecord& query,
                                                    const ImplicitMap& map) {
  std::map<KeyframeId, LoopCandidate> by_match;
  auto [lo, hi] = rows_.equal_range(query.frame_id);
  for (auto it = lo; it != hi; ++it) {
    const LoopMatchRow& row = it->second;
    if (!map.contains(row.match_keyframe)) continue;
    const KeyframeRecord& rec = map.record(row.match_keyframe);
    if (!eligible(query, rec, opts_.min_time_gap)) continue;
    const auto qi = nearest(query.keypoints, row.query_uv, snap_);
    const auto mi = nearest(rec.keypoints, row.match_uv, snap_);
    if (!qi || !mi) continue;
    auto& c = by_match[row.match_keyframe];
    c.query = query.keyframe_id;
    c.match = row.match_keyframe;
    c.correspondences.push_back(
        {query.keypoints[*qi].left, rec.keypoints[*mi].left, *qi, *mi, query.keypoints[*qi].track});
  }
  std::vector<LoopCandidate> out;
  for (auto& [id, c] : by_match) {
    c.score = static_cast<double>(c.correspondences.size());
    out.push_back(std::move(c));
  }
  sort_candidates(out);
  if (static_cast<int>(out.size()) > opts_.max_candidates) out.resize(opts_.max_candidates);
  return out;
}

namespace {

/// Transient depth of a match-keyframe keypoint along its left ray: the
/// parallax-weighted two-view depths against its stereo mate and against every
/// other keyframe view of the same key, sum(N) / sum(D). With only a stereo
/// mate this is the stereo depth.
std::optional<double> lift_depth(const Keypoint& kp, KeyframeId match, const FullState& state,
                                 const ImplicitMap& map, const VisionOptions& opts) {
  const Vec3 ray = kp.left.homogeneous();
  const ViewId gamma{PoseHandle::keyframe(match), Eye::Left};
  double sum_n = 0.0, sum_d = 0.0;
  auto add = [&](const Vec3& p_i, const Mat3& R, const Vec3& t) {
    const double d = p_i.cross(R * ray).norm();
    if (d < opts.min_parallax) return;
    sum_n += t.cross(p_i).norm();
    sum_d += d;
  };
  if (kp.right) {
    const Mat3 R_RL = state.extrinsics.right.R_CB() * state.extrinsics.left.R_CB().transpose();
    add(kp.right->homogeneous(), R_RL, state.extrinsics.right.p_CB - R_RL * state.extrinsics.left.p_CB);
  }
  for (KeyframeId other : map.observers(kp.key)) {
    if (other == match || !state.keyframe_index(other)) continue;
    const Keypoint* o = map.record(other).find(kp.key);
    if (!o) continue;
    for (Eye eye : {Eye::Left, Eye::Right}) {
      if (eye == Eye::Right && !o->right) continue;
      const RelativePose rel =
          relative_camera_pose(state, gamma, {PoseHandle::keyframe(other), eye});
      add((eye == Eye::Left ? o->left : *o->right).homogeneous(), rel.R, rel.t);
    }
  }
  if (!(sum_d > 0.0)) return std::nullopt;
  const double depth = sum_n / sum_d;
  if (!(depth > opts.eps_depth) || !std::isfinite(depth)) return std::nullopt;
  return depth;
}

}  // namespace

std::optional<VerifiedLoop> geometric_verify(const LoopCandidate& candidate, const FullState& state,
                                             const ImplicitMap& map, const VerifyOptions& opts) {
  const auto& corr = candidate.correspondences;
  if (static_cast<int>(corr.size()) < opts.min_inliers || !map.contains(candidate.match) ||
      !state.keyframe_index(candidate.match)) {
    return std::nullopt;
  }
  // Step 1: 2D-2D consistency.
  std::vector<Vec2> xm, xq;
  for (const Correspondence& c : corr) {
    xm.push_back(c.match);
    xq.push_back(c.query);
  }
  const RansacResult e = ransac_essential(xm, xq, opts.ransac);
  if (static_cast<int>(e.inliers.size()) < opts.min_inliers) return std::nullopt;

  // Step 2: lift the survivors in the match camera and check them against the query.
  const KeyframeRecord& rec = map.record(candidate.match);
  std::vector<Vec3> X;
  std::vector<Vec2> x;
  std::vector<std::size_t> ids;
  for (std::size_t i : e.inliers) {
    const Keypoint& kp = rec.keypoints.at(corr[i].match_index);
    const auto d = lift_depth(kp, candidate.match, state, map, opts.vision);
    if (!d) continue;
    X.push_back(*d * kp.left.homogeneous());
    x.push_back(corr[i].query);
    ids.push_back(i);
  }
  if (static_cast<int>(X.size()) < opts.min_inliers) return std::nullopt;
  const auto pnp = ransac_pnp(X, x, opts.ransac);
  if (!pnp || static_cast<int>(pnp->inliers.size()) < opts.min_inliers) return std::nullopt;

  VerifiedLoop out;
  out.candidate = candidate;
  out.query_from_match = pnp->pose;
  out.step1_inliers = static_cast<int>(e.inliers.size());
  for (std::size_t k : pnp->inliers) out.inliers.push_back(ids[k]);
  std::sort(out.inliers.begin(), out.inliers.end());
  return out;
}

std::vector<KeyframeId> covisible_keyframes(KeyframeId match, const ImplicitMap& map,
                                            int min_shared) {
  std::vector<std::pair<int, KeyframeId>> ranked;
  for (const auto& [id, n] : map.neighbours(match)) {
    if (n >= min_shared) ranked.emplace_back(n, id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  std::vector<KeyframeId> out{match};
  for (const auto& [n, id] : ranked) out.push_back(id);
  return out;
}

FeatureTrack map_track(const FeatureTrack& live, const Keypoint& match_kp,
                       const std::vector<KeyframeId>& loop_keyframes, const FullState& state,
                       const ImplicitMap& map, double sigma) {
  FeatureTrack track;
  track.id = live.id;
  for (const NormalizedObservation& o : live.observations) {
    if (o.view.frame.kind == PoseKind::Clone && state.contains(o.view.frame)) {
      track.observations.push_back(o);
    }
  }
  for (KeyframeId id : loop_keyframes) {
    if (!map.contains(id) || !state.keyframe_index(id)) continue;
    const Keypoint* kp = map.record(id).find(match_kp.key);
    if (!kp) continue;
    const PoseHandle h = PoseHandle::keyframe(id);
    track.observations.push_back({{h, Eye::Left}, kp->left, sigma});
    if (kp->right) track.observations.push_back({{h, Eye::Right}, *kp->right, sigma});
  }
  return track;
}

MapMeasurement map_residual_batch(const VerifiedLoop& loop, std::span<const FeatureTrack> live_tracks,
                                  const std::vector<KeyframeId>& loop_keyframes,
                                  const FullState& state, const ImplicitMap& map,
                                  const ResidualPolicy& policy) {
  MapMeasurement out;
  out.batch = MeasurementBatch::empty(state.error_dim());
  if (!map.contains(loop.candidate.match)) return out;
  const KeyframeRecord& match = map.record(loop.candidate.match);
  ResidualPolicy map_policy = policy;
  map_policy.use_ray = false;

  std::set<TrackId> seen;
  std::vector<MeasurementBatch> parts;
  for (std::size_t i : loop.inliers) {
    const Correspondence& c = loop.candidate.correspondences.at(i);
    const Keypoint& mkp = match.keypoints.at(c.match_index);
    const FeatureTrack* live = nullptr;
    for (const FeatureTrack& t : live_tracks) {
      if (t.id == c.query_track) {
        live = &t;
        break;
      }
    }
    if (!live || !seen.insert(live->id).second) continue;
    double sigma = kDefaultPixelSigma;
    if (!live->observations.empty()) sigma = live->observations.front().sigma;
    const FeatureTrack track =
        map_track(*live, mkp, loop_keyframes, state, map, sigma * policy.map_keypoint_sigma_scale);
    const MeasurementBatch rows =
        track_measurement(track, state, map_policy, RowSource::Map, TargetSet::ClonesOnly);
    if (rows.rows() == 0) continue;
    parts.push_back(rows);
    out.consumed.push_back(live->id);
  }
  out.batch = MeasurementBatch::concat(parts, state.error_dim());
  return out;
}

}  // namespace spvins
