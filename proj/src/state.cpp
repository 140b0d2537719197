#include "spvins/state.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace spvins {

Pose CameraExtrinsic::body_from_camera() const {
  const Mat3 R_BC = R_CB().transpose();
  return {R_BC, -R_BC * p_CB};
}

std::ostream& operator<<(std::ostream& os, const PoseHandle& h) {
  return os << (h.kind == PoseKind::Clone ? "clone:" : "keyframe:") << h.id;
}

std::optional<std::size_t> FullState::clone_index(FrameId id) const {
  for (std::size_t i = 0; i < clones.size(); ++i) {
    if (clones[i].frame_id == id) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> FullState::keyframe_index(KeyframeId id) const {
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    if (keyframes[i].keyframe_id == id) return i;
  }
  return std::nullopt;
}

bool FullState::contains(const PoseHandle& h) const {
  return h.kind == PoseKind::Clone ? clone_index(h.id).has_value()
                                   : keyframe_index(h.id).has_value();
}

namespace {

[[noreturn]] void missing(const PoseHandle& h) {
  std::ostringstream os;
  os << "pose " << h << " is not in the state";
  throw StateError(os.str());
}

}  // namespace

Pose FullState::pose(const PoseHandle& h) const {
  if (h.kind == PoseKind::Clone) {
    if (auto i = clone_index(h.id)) return clones[*i].pose();
  } else {
    if (auto i = keyframe_index(h.id)) return keyframes[*i].pose();
  }
  missing(h);
}

int FullState::pose_offset(const PoseHandle& h) const {
  if (h.kind == PoseKind::Clone) {
    if (auto i = clone_index(h.id)) return clone_offset(*i);
  } else {
    if (auto i = keyframe_index(h.id)) return keyframe_offset(*i);
  }
  missing(h);
}

double FullState::timestamp(const PoseHandle& h) const {
  if (h.kind == PoseKind::Clone) {
    if (auto i = clone_index(h.id)) return clones[*i].timestamp;
  } else {
    if (auto i = keyframe_index(h.id)) return keyframes[*i].timestamp;
  }
  missing(h);
}

void symmetrize(Covariance& cov) {
  cov = 0.5 * (cov + cov.transpose()).eval();
}

void erase_block(Covariance& cov, int start, int count) {
  const int n = static_cast<int>(cov.rows());
  const int tail = n - start - count;
  Covariance out(n - count, n - count);
  out.topLeftCorner(start, start) = cov.topLeftCorner(start, start);
  out.topRightCorner(start, tail) = cov.topRightCorner(start, tail);
  out.bottomLeftCorner(tail, start) = cov.bottomLeftCorner(tail, start);
  out.bottomRightCorner(tail, tail) = cov.bottomRightCorner(tail, tail);
  cov = std::move(out);
}

void insert_block(Covariance& cov, int start, int count) {
  const int n = static_cast<int>(cov.rows());
  const int tail = n - start;
  Covariance out = Covariance::Zero(n + count, n + count);
  out.topLeftCorner(start, start) = cov.topLeftCorner(start, start);
  out.topRightCorner(start, tail) = cov.topRightCorner(start, tail);
  out.bottomLeftCorner(tail, start) = cov.bottomLeftCorner(tail, start);
  out.bottomRightCorner(tail, tail) = cov.bottomRightCorner(tail, tail);
  cov = std::move(out);
}

namespace {

// Duplicates rows/cols `src[0..5]` into the zeroed block starting at `dst`.
void copy_pose_block(Covariance& cov, const int (&src)[6], int dst) {
  for (int a = 0; a < 6; ++a) cov.row(dst + a) = cov.row(src[a]);
  for (int a = 0; a < 6; ++a) cov.col(dst + a) = cov.col(src[a]);
}

void check_dims(const FullState& state, const Covariance& cov) {
  if (cov.rows() != state.error_dim() || cov.cols() != state.error_dim()) {
    throw StateError("covariance dimension does not match the error state");
  }
}

}  // namespace

void augment_clone(FullState& state, Covariance& cov, FrameId frame_id, double timestamp,
                   std::size_t max_clones) {
  check_dims(state, cov);
  if (!state.clones.empty() && timestamp <= state.clones.back().timestamp) {
    throw StateError("clone timestamps must be strictly increasing");
  }
  if (state.clone_index(frame_id)) throw StateError("duplicate clone frame id");
  while (max_clones > 0 && state.clones.size() >= max_clones) {
    marginalize_oldest_clone(state, cov);
  }
  const int offset = state.clone_offset(state.clones.size());
  insert_block(cov, offset, layout::kPoseDim);
  // Under the transformed errors the clone error is exactly the current (phi, dp_st).
  copy_pose_block(cov, kImuPoseIndex, offset);
  state.clones.push_back({state.imu.q_GB, state.imu.p_GB, timestamp, frame_id});
}

void marginalize_clone(FullState& state, Covariance& cov, FrameId frame_id) {
  check_dims(state, cov);
  auto idx = state.clone_index(frame_id);
  if (!idx) throw StateError("no clone with that frame id");
  erase_block(cov, state.clone_offset(*idx), layout::kPoseDim);
  state.clones.erase(state.clones.begin() + static_cast<std::ptrdiff_t>(*idx));
}

void marginalize_oldest_clone(FullState& state, Covariance& cov) {
  if (state.clones.empty()) throw StateError("no clone to marginalize");
  marginalize_clone(state, cov, state.clones.front().frame_id);
}

void remove_keyframe(FullState& state, Covariance& cov, KeyframeId id) {
  check_dims(state, cov);
  auto idx = state.keyframe_index(id);
  if (!idx) throw StateError("no keyframe with that id");
  erase_block(cov, state.keyframe_offset(*idx), layout::kPoseDim);
  state.keyframes.erase(state.keyframes.begin() + static_cast<std::ptrdiff_t>(*idx));
}

KeyframeId promote_clone_to_keyframe(FullState& state, Covariance& cov, FrameId clone_frame_id,
                                     KeyframeId new_id, std::size_t max_keyframes,
                                     const KeyframeEvictionPolicy& evict) {
  check_dims(state, cov);
  auto ci = state.clone_index(clone_frame_id);
  if (!ci) throw StateError("cannot promote a clone that is not in the window");
  if (state.keyframe_index(new_id)) throw StateError("duplicate keyframe id");
  if (max_keyframes == 0) throw StateError("keyframe budget is zero");
  while (state.keyframes.size() >= max_keyframes) {
    const KeyframeId victim = evict ? evict(state) : state.keyframes.front().keyframe_id;
    remove_keyframe(state, cov, victim);
  }
  const PoseClone& c = state.clones[*ci];
  const int src = state.clone_offset(*ci);
  const int dst = state.error_dim();
  insert_block(cov, dst, layout::kPoseDim);
  const int rows[6] = {src, src + 1, src + 2, src + 3, src + 4, src + 5};
  copy_pose_block(cov, rows, dst);
  state.keyframes.push_back({c.q_GB, c.p_GB, new_id, c.frame_id, c.timestamp});
  return new_id;
}

namespace {

void inject_pose(Quat& q, Vec3& p, const Eigen::Ref<const Eigen::VectorXd>& d) {
  const Vec3 phi = d.segment<3>(0);
  const Mat3 dR = exp_so3(phi);
  q = apply_quat_error(phi, q);
  p = dR * p + d.segment<3>(3);
}

void extract_pose(const Quat& q_true, const Vec3& p_true, const Quat& q_est, const Vec3& p_est,
                  Eigen::Ref<Eigen::VectorXd> d) {
  const Vec3 phi = extract_quat_error(q_true, q_est);
  d.segment<3>(0) = phi;
  d.segment<3>(3) = p_true - exp_so3(phi) * p_est;
}

}  // namespace

void inject_correction(FullState& state, const Eigen::VectorXd& delta) {
  if (delta.size() != state.error_dim()) {
    throw StateError("correction dimension does not match the error state");
  }
  using namespace layout;
  ImuState& s = state.imu;
  const Vec3 phi = delta.segment<3>(kRot);
  const Mat3 dR = exp_so3(phi);
  s.q_GB = apply_quat_error(phi, s.q_GB);
  s.v_GB = dR * s.v_GB + delta.segment<3>(kVel);
  s.p_GB = dR * s.p_GB + delta.segment<3>(kPos);
  s.bg += delta.segment<3>(kBg);
  s.ba += delta.segment<3>(kBa);

  for (std::size_t i = 0; i < state.clones.size(); ++i) {
    inject_pose(state.clones[i].q_GB, state.clones[i].p_GB,
                delta.segment<6>(state.clone_offset(i)));
  }
  for (Eye eye : {Eye::Left, Eye::Right}) {
    const int o = state.extrinsic_offset(eye);
    CameraExtrinsic& e = state.extrinsics[eye];
    e.q_CB = apply_quat_error(delta.segment<3>(o), e.q_CB);
    e.p_CB += delta.segment<3>(o + 3);
  }
  for (std::size_t i = 0; i < state.keyframes.size(); ++i) {
    inject_pose(state.keyframes[i].q_GB, state.keyframes[i].p_GB,
                delta.segment<6>(state.keyframe_offset(i)));
  }
}

Eigen::VectorXd extract_error(const FullState& truth, const FullState& estimate) {
  if (truth.clones.size() != estimate.clones.size() ||
      truth.keyframes.size() != estimate.keyframes.size()) {
    throw StateError("states have different structure");
  }
  using namespace layout;
  Eigen::VectorXd d(estimate.error_dim());
  const ImuState& t = truth.imu;
  const ImuState& e = estimate.imu;
  const Vec3 phi = extract_quat_error(t.q_GB, e.q_GB);
  const Mat3 dR = exp_so3(phi);
  d.segment<3>(kRot) = phi;
  d.segment<3>(kVel) = t.v_GB - dR * e.v_GB;
  d.segment<3>(kPos) = t.p_GB - dR * e.p_GB;
  d.segment<3>(kBg) = t.bg - e.bg;
  d.segment<3>(kBa) = t.ba - e.ba;
  for (std::size_t i = 0; i < estimate.clones.size(); ++i) {
    extract_pose(truth.clones[i].q_GB, truth.clones[i].p_GB, estimate.clones[i].q_GB,
                 estimate.clones[i].p_GB, d.segment<6>(estimate.clone_offset(i)));
  }
  for (Eye eye : {Eye::Left, Eye::Right}) {
    const int o = estimate.extrinsic_offset(eye);
    d.segment<3>(o) = extract_quat_error(truth.extrinsics[eye].q_CB, estimate.extrinsics[eye].q_CB);
    d.segment<3>(o + 3) = truth.extrinsics[eye].p_CB - estimate.extrinsics[eye].p_CB;
  }
  for (std::size_t i = 0; i < estimate.keyframes.size(); ++i) {
    extract_pose(truth.keyframes[i].q_GB, truth.keyframes[i].p_GB, estimate.keyframes[i].q_GB,
                 estimate.keyframes[i].p_GB, d.segment<6>(estimate.keyframe_offset(i)));
  }
  return d;
}

void write_pose_line(std::ostream& os, double timestamp, const Quat& q, const Vec3& p) {
  const Quat c = canonical(q);
  // "+ 0.0" folds negative zeros so identical poses print identically.
  os << std::setprecision(17) << timestamp << ' ' << p.x() + 0.0 << ' ' << p.y() + 0.0 << ' '
     << p.z() + 0.0 << ' ' << c.x() + 0.0 << ' ' << c.y() + 0.0 << ' ' << c.z() + 0.0 << ' '
     << c.w() + 0.0 << '\n';
}

}  // namespace spvins
