#include <doctest.h>

#include <cmath>
#include <set>

#include "spvins/simulator.hpp"
#include "spvins/vision.hpp"

using namespace spvins;

namespace {

TrajectorySpec short_spec(TrajectoryKind kind, double duration = 20.0) {
  TrajectorySpec s;
  s.kind = kind;
  s.duration = duration;
  return s;
}

WorldSpec quiet_world() {
  WorldSpec w;
  w.imu_noise = {0.0, 0.0, 0.0, 0.0};
  w.pixel_sigma = 0.0;
  return w;
}

}  // namespace

TEST_CASE("trajectory derivatives agree with finite differences") {
  for (TrajectoryKind kind :
       {TrajectoryKind::Circle, TrajectoryKind::FigureEight, TrajectoryKind::WaypointSpline}) {
    const Trajectory traj(short_spec(kind, 60.0));
    const double h = 1e-4;
    for (double t = 0.5; t < 59.5; t += 3.7) {
      const Kinematics k = traj.at(t), kp = traj.at(t + h), km = traj.at(t - h);
      const Vec3 v_fd = (kp.pose.t - km.pose.t) / (2 * h);
      const Vec3 a_fd = (kp.velocity - km.velocity) / (2 * h);
      const Vec3 w_fd = log_so3(km.pose.R.transpose() * kp.pose.R) / (2 * h);
      CHECK((k.velocity - v_fd).norm() < 1e-6);
      CHECK((k.acceleration - a_fd).norm() < 1e-5);
      CHECK((k.omega_body - w_fd).norm() < 1e-6);
      CHECK((k.pose.R * k.specific_force + default_gravity() - k.acceleration).norm() < 1e-12);
    }
  }
}

TEST_CASE("circle has centripetal acceleration s^2/r") {
  TrajectorySpec s = short_spec(TrajectoryKind::Circle, 40.0);
  s.vertical_amplitude = 0.0;
  s.attitude_wobble = 0.0;
  s.speed = 2.0;
  const Trajectory traj(s);
  for (double t : {0.0, 3.0, 17.5, 39.0}) {
    const Kinematics k = traj.at(t);
    const Vec3 radial = -Vec3(k.pose.t.x(), k.pose.t.y(), 0.0);
    const double r = radial.norm();
    CHECK(k.velocity.norm() == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(k.acceleration.dot(radial / r) == doctest::Approx(4.0 / r).epsilon(1e-9));
    // Heading is tangent, so the centripetal pull is purely lateral in the body.
    const Vec3 a_body = k.pose.R.transpose() * k.acceleration;
    CHECK(std::abs(a_body.x()) < 1e-9);
    CHECK(a_body.norm() == doctest::Approx(4.0 / r).epsilon(1e-9));
  }
}

TEST_CASE("static trajectory reads only gravity") {
  TrajectorySpec s;
  s.speed = 0.0;
  s.attitude_wobble = 0.0;
  const Trajectory traj(s);
  for (double t : {0.0, 10.0, 60.0}) {
    const Kinematics k = traj.at(t);
    CHECK(k.omega_body.norm() == 0.0);
    CHECK((k.specific_force - k.pose.R.transpose() * -default_gravity()).norm() < 1e-12);
  }
}

TEST_CASE("noiseless imu reproduces the analytic rates") {
  const Trajectory traj(short_spec(TrajectoryKind::FigureEight, 5.0));
  WorldSpec w = quiet_world();
  w.initial_gyro_bias = Vec3(0.01, -0.02, 0.03);
  w.initial_accel_bias = Vec3(0.1, 0.0, -0.1);
  std::vector<std::int64_t> ns;
  const auto imu = sim_imu(traj, w, 3, &ns);
  REQUIRE(imu.size() == 1001);
  CHECK(ns[1] - ns[0] == 5'000'000);
  for (std::size_t i = 0; i < imu.size(); i += 37) {
    const Kinematics k = traj.at(imu[i].timestamp);
    CHECK((imu[i].omega - k.omega_body - w.initial_gyro_bias).norm() < 1e-14);
    CHECK((imu[i].accel - k.specific_force - w.initial_accel_bias).norm() < 1e-14);
  }
}

TEST_CASE("imu white noise has the discrete variance sigma^2/dt") {
  TrajectorySpec s;
  s.speed = 0.0;
  s.duration = 1e6 / 200.0 - 0.005;  // exactly 1e6 samples
  const Trajectory traj(s);
  WorldSpec w;
  w.imu_noise.sigma_wg = 0.0;
  w.imu_noise.sigma_wa = 0.0;
  const auto imu = sim_imu(traj, w, 5);
  REQUIRE(imu.size() == 1'000'000);
  const Vec3 f0 = traj.at(0.0).specific_force;
  Vec3 sg = Vec3::Zero(), sa = Vec3::Zero();
  for (const ImuSample& m : imu) {
    sg += m.omega.cwiseAbs2();
    sa += (m.accel - f0).cwiseAbs2();
  }
  const double n = static_cast<double>(imu.size()), dt = 1.0 / 200.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(sg[i] / n == doctest::Approx(w.imu_noise.sigma_g * w.imu_noise.sigma_g / dt).epsilon(0.05));
    CHECK(sa[i] / n == doctest::Approx(w.imu_noise.sigma_a * w.imu_noise.sigma_a / dt).epsilon(0.05));
  }
}

TEST_CASE("bias random walk variance grows as sigma_w^2 T") {
  TrajectorySpec s;
  s.speed = 0.0;
  s.duration = 10.0;
  const Trajectory traj(s);
  WorldSpec w;
  w.imu_noise.sigma_g = 0.0;
  w.imu_noise.sigma_a = 0.0;
  const int runs = 600;
  double vg = 0.0, va = 0.0, T = 0.0;
  for (int r = 0; r < runs; ++r) {
    std::vector<std::pair<Vec3, Vec3>> b;
    std::vector<std::int64_t> ns;
    sim_imu(traj, w, 1000 + r, &ns, &b);
    T = ns_to_seconds(ns.back());
    vg += b.back().first.squaredNorm();
    va += b.back().second.squaredNorm();
  }
  vg /= 3.0 * runs;
  va /= 3.0 * runs;
  CHECK(vg == doctest::Approx(w.imu_noise.sigma_wg * w.imu_noise.sigma_wg * T).epsilon(0.1));
  CHECK(va == doctest::Approx(w.imu_noise.sigma_wa * w.imu_noise.sigma_wa * T).epsilon(0.1));
}

TEST_CASE("noiseless tracks have zero pose-only residual at truth") {
  const SimulatedDataset data = simulate(short_spec(TrajectoryKind::Circle, 60.0), quiet_world());
  FullState state;
  state.extrinsics = data.extrinsics;
  for (FrameId f : {5, 10, 15, 20}) {
    PoseClone c;
    c.q_GB = data.groundtruth[f].state.q_GB;
    c.p_GB = data.groundtruth[f].state.p_GB;
    c.frame_id = f;
    c.timestamp = ns_to_seconds(data.frames[f].timestamp_ns);
    state.clones.push_back(c);
  }
  std::map<TrackId, FeatureTrack> tracks;
  for (const SimObservation& o : data.observations) {
    if (o.frame % 5 != 0 || o.frame < 5 || o.frame > 20) continue;
    FeatureTrack& t = tracks[o.track];
    t.id = o.track;
    t.observations.push_back({{PoseHandle::clone(o.frame), o.eye}, o.uv});
  }
  int checked = 0;
  double worst = 0.0;
  for (const auto& [id, t] : tracks) {
    if (t.observations.size() < 6) continue;
    BaseViewPair base;
    try {
      base = select_base_views(t, state);
    } catch (const DegenerateTrack&) {
      continue;
    }
    for (std::size_t i = 0; i < t.observations.size(); ++i) {
      if (i == base.alpha) continue;
      worst = std::max(worst, landmark_residual(t, state, i, base).norm());
    }
    ++checked;
  }
  CHECK(checked > 50);
  CHECK(worst < 1e-9);
}

TEST_CASE("outlier rate is honoured") {
  WorldSpec w;
  w.outlier_rate = 0.1;
  const SimulatedDataset data = simulate(short_spec(TrajectoryKind::Circle, 40.0), w);
  REQUIRE(data.observations.size() >= 100'000);
  std::size_t bad = 0;
  for (const SimObservation& o : data.observations) bad += o.outlier ? 1 : 0;
  const double frac = static_cast<double>(bad) / static_cast<double>(data.observations.size());
  CHECK(frac == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("observations respect the field of view and cheirality") {
  const SimulatedDataset data = simulate(short_spec(TrajectoryKind::WaypointSpline, 10.0), quiet_world());
  for (std::size_t i = 0; i < data.observations.size(); i += 11) {
    const SimObservation& o = data.observations[i];
    const ImuState& s = data.groundtruth[o.frame].state;
    const Pose cam = data.extrinsics[o.eye].camera_pose(s.pose());
    const Vec3 X = data.landmarks[data.associations.at(o.track)];
    const Vec3 c = cam.R.transpose() * (X - cam.t);
    REQUIRE(c.z() >= 0.3);
    CHECK(c.z() <= 50.0);
    CHECK((c.head<2>() / c.z() - o.uv).norm() < 1e-12);
    CHECK(o.uv.cwiseAbs().maxCoeff() <= 1.5);
  }
}

TEST_CASE("figure-eight revisit re-observes the first-pass landmarks") {
  TrajectorySpec s = short_spec(TrajectoryKind::FigureEight, 60.0);
  const SimulatedDataset data = simulate(s, quiet_world());
  const Trajectory traj(s);
  const auto lap_frames = static_cast<FrameId>(std::llround(traj.lap_time() * 10.0));
  std::map<FrameId, std::set<AssociationKey>> seen;
  for (const SimObservation& o : data.observations) {
    if (o.eye == Eye::Left) seen[o.frame].insert(data.associations.at(o.track));
  }
  std::size_t first = 0, again = 0;
  for (FrameId f = 0; f + lap_frames < static_cast<FrameId>(data.frames.size()); f += 7) {
    for (AssociationKey k : seen[f]) {
      ++first;
      again += seen[f + lap_frames].count(k);
    }
  }
  REQUIRE(first > 1000);
  CHECK(static_cast<double>(again) / static_cast<double>(first) >= 0.8);
}

TEST_CASE("track ids change when a landmark leaves the image") {
  const SimulatedDataset data = simulate(short_spec(TrajectoryKind::Circle, 60.0), quiet_world());
  std::map<AssociationKey, std::set<TrackId>> by_key;
  for (const auto& [track, key] : data.associations) by_key[key].insert(track);
  std::size_t reused = 0;
  for (const auto& [key, ids] : by_key) reused += ids.size() > 1 ? 1 : 0;
  CHECK(reused > 0);
  // Every track is seen in contiguous frames only.
  std::map<TrackId, FrameId> last;
  for (const SimObservation& o : data.observations) {
    if (o.eye != Eye::Left) continue;
    auto it = last.find(o.track);
    if (it != last.end()) CHECK(o.frame == it->second + 1);
    last[o.track] = o.frame;
  }
}

TEST_CASE("simulation is deterministic per seed") {
  WorldSpec w;
  w.outlier_rate = 0.05;
  const TrajectorySpec s = short_spec(TrajectoryKind::WaypointSpline, 5.0);
  const SimulatedDataset a = simulate(s, w), b = simulate(s, w);
  REQUIRE(a.observations.size() == b.observations.size());
  bool same = a.imu.size() == b.imu.size();
  for (std::size_t i = 0; same && i < a.imu.size(); ++i) {
    same = a.imu[i].omega == b.imu[i].omega && a.imu[i].accel == b.imu[i].accel;
  }
  for (std::size_t i = 0; same && i < a.observations.size(); ++i) {
    same = a.observations[i].uv == b.observations[i].uv && a.observations[i].track == b.observations[i].track;
  }
  CHECK(same);
  TrajectorySpec other = s;
  other.seed = 2;
  CHECK(simulate(other, w).imu[10].omega != a.imu[10].omega);
}

TEST_CASE("invalid specs are rejected") {
  TrajectorySpec s;
  s.duration = 0.0;
  CHECK_THROWS_AS(Trajectory{s}, std::invalid_argument);
  CHECK_THROWS_AS(parse_trajectory_kind("spiral"), std::invalid_argument);
  CHECK(parse_trajectory_kind(to_string(TrajectoryKind::FigureEight)) == TrajectoryKind::FigureEight);
}
