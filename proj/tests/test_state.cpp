#include <doctest.h>

#include <sstream>

#include <Eigen/Eigenvalues>

#include "spvins/state.hpp"
#include "test_support.hpp"

using namespace spvins;
using namespace spvins::test;

namespace {

Covariance indexed(const Covariance& P, const std::vector<int>& idx) {
  Covariance out(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = P(idx[i], idx[j]);
  return out;
}

std::vector<int> pose_rows(int offset) {
  return {offset, offset + 1, offset + 2, offset + 3, offset + 4, offset + 5};
}

}  // namespace

TEST_CASE("error dimension bookkeeping") {
  Rng rng(1);
  const Scene s = random_scene(rng, 3, 2);
  CHECK(s.state.error_dim() == 15 + 18 + 12 + 12);
  CHECK(s.state.extrinsic_offset() == 33);
  CHECK(s.state.extrinsic_offset(Eye::Right) == 39);
  CHECK(s.state.keyframe_offset(1) == 51);
  CHECK(s.state.pose_offset(PoseHandle::keyframe(101)) == 51);
  CHECK_THROWS_AS(s.state.pose_offset(PoseHandle::clone(999)), StateError);
}

TEST_CASE("augmentation duplicates the current pose block") {
  FullState st;
  Covariance P = Covariance::Identity(27, 27);
  augment_clone(st, P, 1, 0.1, 11);
  REQUIRE(P.rows() == 33);
  const std::vector<int> imu(kImuPoseIndex, kImuPoseIndex + 6);
  CHECK((indexed(P, pose_rows(15)) - Eigen::MatrixXd::Identity(6, 6)).norm() == 0.0);
  for (int a = 0; a < 6; ++a) CHECK(P(15 + a, imu[a]) == 1.0);
  CHECK((P.bottomRightCorner(12, 12) - Eigen::MatrixXd::Identity(12, 12)).norm() == 0.0);

  // Two augments at the same pose: identical clone blocks.
  augment_clone(st, P, 2, 0.2, 11);
  CHECK((indexed(P, pose_rows(15)) - indexed(P, pose_rows(21))).norm() == 0.0);
  CHECK(st.clones[0].q_GB.coeffs() == st.clones[1].q_GB.coeffs());
}

TEST_CASE("augmentation on a random covariance") {
  Rng rng(2);
  Scene s = random_scene(rng, 4, 2);
  Covariance P = random_spd(rng, s.state.error_dim());
  const Covariance P0 = P;
  const int n0 = P.rows();
  augment_clone(s.state, P, 99, 100.0, 11);
  const int o = s.state.clone_offset(4);
  std::vector<int> imu(kImuPoseIndex, kImuPoseIndex + 6);
  CHECK((indexed(P, pose_rows(o)) - indexed(P0, imu)).norm() == 0.0);
  // Cross terms with every other entry equal the IMU pose rows.
  std::vector<int> others;
  for (int i = 0; i < n0; ++i) others.push_back(i < o ? i : i + 6);
  for (int a = 0; a < 6; ++a)
    for (int j = 0; j < n0; ++j) CHECK(P(o + a, others[j]) == P0(imu[a], j));
  // Old entries untouched.
  CHECK((indexed(P, others) - P0).norm() == 0.0);
}

TEST_CASE("window overflow marginalizes the oldest clone") {
  Rng rng(3);
  FullState st;
  Covariance P = random_spd(rng, 27);
  for (int i = 0; i < 5; ++i) augment_clone(st, P, i, 0.1 * i, 3);
  CHECK(st.clones.size() == 3);
  CHECK(st.clones.front().frame_id == 2);
  CHECK(P.rows() == st.error_dim());
  CHECK_THROWS_AS(augment_clone(st, P, 10, 0.0, 3), StateError);
}

TEST_CASE("marginalization matches the index-mask oracle") {
  Rng rng(4);
  Scene s = random_scene(rng, 5, 3);
  Covariance P = random_spd(rng, s.state.error_dim());
  const Covariance P0 = P;
  const int o = s.state.clone_offset(2);
  marginalize_clone(s.state, P, s.state.clones[2].frame_id);
  std::vector<int> keep;
  for (int i = 0; i < P0.rows(); ++i)
    if (i < o || i >= o + 6) keep.push_back(i);
  CHECK(P.rows() == P0.rows() - 6);
  CHECK((P - indexed(P0, keep)).norm() == 0.0);
  CHECK(s.state.error_dim() == P.rows());
}

TEST_CASE("marginalize then re-add at the same instant") {
  Rng rng(5);
  Scene s = random_scene(rng, 2, 0);
  Covariance P = random_spd(rng, s.state.error_dim());
  FullState a = s.state;
  Covariance Pa = P;
  augment_clone(a, Pa, 50, 10.0, 11);
  marginalize_clone(a, Pa, 50);
  CHECK((Pa - P).norm() == 0.0);
}

TEST_CASE("promotion copies the clone block and respects the budget") {
  Rng rng(6);
  Scene s = random_scene(rng, 4, 2);
  Covariance P = random_spd(rng, s.state.error_dim());
  const Covariance P0 = P;
  const FrameId fid = s.state.clones[1].frame_id;
  const int src = s.state.clone_offset(1);
  promote_clone_to_keyframe(s.state, P, fid, 500, 10);
  const KeyframePose& k = s.state.keyframes.back();
  CHECK(k.q_GB.coeffs() == s.state.clones[1].q_GB.coeffs());
  CHECK(k.p_GB == s.state.clones[1].p_GB);
  const int dst = s.state.keyframe_offset(2);
  CHECK((indexed(P, pose_rows(dst)) - indexed(P0, pose_rows(src))).norm() == 0.0);
  for (int a = 0; a < 6; ++a)
    for (int j = 0; j < P0.rows(); ++j) CHECK(P(dst + a, j) == P0(src + a, j));

  // Full budget: one eviction, dimension unchanged.
  const int n = P.rows();
  promote_clone_to_keyframe(s.state, P, s.state.clones[2].frame_id, 501, 3);
  CHECK(P.rows() == n);
  CHECK(s.state.keyframes.size() == 3);
  CHECK(s.state.keyframes.front().keyframe_id == 101);

  // Custom policy.
  promote_clone_to_keyframe(s.state, P, s.state.clones[3].frame_id, 502, 3,
                            [](const FullState&) { return KeyframeId{500}; });
  CHECK(!s.state.keyframe_index(500));
  CHECK(P.rows() == s.state.error_dim());
}

TEST_CASE("zero and bias-only corrections") {
  Rng rng(7);
  Scene s = random_scene(rng, 3, 2);
  FullState a = s.state;
  inject_correction(a, Eigen::VectorXd::Zero(a.error_dim()));
  CHECK(extract_error(s.state, a).norm() < 1e-15);

  Eigen::VectorXd d = Eigen::VectorXd::Zero(a.error_dim());
  d.segment<3>(layout::kBg) = Vec3(1e-3, 2e-3, 3e-3);
  d.segment<3>(layout::kBa) = Vec3(-1e-2, 0, 1e-2);
  inject_correction(a, d);
  CHECK((a.imu.bg - s.state.imu.bg - Vec3(1e-3, 2e-3, 3e-3)).norm() < 1e-16);
  CHECK(a.imu.q_GB.coeffs() == s.state.imu.q_GB.coeffs());
  CHECK(a.imu.p_GB == s.state.imu.p_GB);
  CHECK(a.imu.v_GB == s.state.imu.v_GB);
  CHECK(a.clones[0].p_GB == s.state.clones[0].p_GB);

  CHECK_THROWS_AS(inject_correction(a, Eigen::VectorXd::Zero(3)), StateError);
}

TEST_CASE("injection and extraction are inverse") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Scene s = random_scene(rng, 3, 2);
    Eigen::VectorXd d(s.state.error_dim());
    for (int i = 0; i < d.size(); ++i) d[i] = 0.05 * std::normal_distribution<double>()(rng);
    FullState truth = s.state;
    inject_correction(truth, d);
    CHECK((extract_error(truth, s.state) - d).norm() < 1e-12);

    // Undo through the extracted error of the original w.r.t. the corrected state.
    FullState back = truth;
    inject_correction(back, extract_error(s.state, truth));
    for (std::size_t i = 0; i < back.clones.size(); ++i) {
      CHECK((back.clones[i].p_GB - s.state.clones[i].p_GB).norm() < 1e-9);
      CHECK(rotation_distance(back.clones[i].q_GB.toRotationMatrix(),
                              s.state.clones[i].q_GB.toRotationMatrix()) < 1e-9);
    }
    CHECK((back.imu.p_GB - s.state.imu.p_GB).norm() < 1e-9);
  }
}

TEST_CASE("injection matches the transformed error definition to first order") {
  // For a small delta, phi is the orientation error and the translational
  // block equals -dp + [p x] phi with dp = estimate - truth.
  Rng rng(9);
  Scene s = random_scene(rng, 1, 0);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(s.state.error_dim());
  const Vec3 phi = randn3(rng, 1e-4), xi = randn3(rng, 1e-4);
  d.segment<3>(layout::kRot) = phi;
  d.segment<3>(layout::kPos) = xi;
  FullState truth = s.state;
  inject_correction(truth, d);
  const Vec3 dp = s.state.imu.p_GB - truth.imu.p_GB;
  const StError st = st_error_from_standard(dp, dp, phi, s.state.imu.p_GB, s.state.imu.p_GB);
  CHECK((st.dp - xi).norm() < 1e-7 * (1 + s.state.imu.p_GB.norm()));
}

TEST_CASE("trajectory line format") {
  std::ostringstream os;
  write_pose_line(os, 1.5, Quat(-1, 0, 0, 0), Vec3(1, 2, 3));
  CHECK(os.str() == "1.5 1 2 3 0 0 0 1\n");
}
