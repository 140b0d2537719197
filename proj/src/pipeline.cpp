#include "spvins/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

namespace spvins {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

const StateRecord& nearest_state(const std::vector<StateRecord>& states, std::int64_t ns) {
  const StateRecord* best = &states.front();
  for (const StateRecord& s : states) {
    if (std::llabs(s.timestamp_ns - ns) < std::llabs(best->timestamp_ns - ns)) best = &s;
  }
  return *best;
}

ImuState sample_initial_state(const ImuState& truth, const InitialSigmas& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FullState x;
  x.imu = truth;
  Eigen::VectorXd d = Eigen::VectorXd::Zero(x.error_dim());
  const double sigma[5] = {s.attitude, s.velocity, s.position, s.gyro_bias, s.accel_bias};
  for (int i = 0; i < 15; ++i) d[i] = sigma[i / 3] * g(rng);
  inject_correction(x, d);
  return x.imu;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("no dataset directory " + dir.string());
  Dataset d;
  d.imu = read_imu_csv(dir / "imu.csv");
  d.frames = read_frames_csv(dir / "frames.csv");
  for (const TrackRecord& t : read_tracks_csv(dir / "tracks.csv")) {
    d.observations[t.frame].push_back({t.track, t.eye, t.uv});
  }
  if (std::filesystem::exists(dir / "associations.csv")) {
    d.associations = read_associations_csv(dir / "associations.csv");
  }
  d.calibration = read_calibration_csv(dir / "calibration.csv");
  d.groundtruth = read_state_csv(dir / "groundtruth_state.csv");
  if (d.groundtruth.empty()) throw InputError((dir / "groundtruth_state.csv").string() + ": no states");
  if (d.frames.empty()) throw InputError((dir / "frames.csv").string() + ": no frames");
  if (d.imu.empty()) throw InputError((dir / "imu.csv").string() + ": no samples");
  if (std::filesystem::exists(dir / "loop_matches.csv")) {
    d.loop_matches = read_loop_matches_csv(dir / "loop_matches.csv");
  }
  return d;
}

ExtrinsicState perturb_extrinsics(const ExtrinsicState& e, double rotation_deg, double translation,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  auto direction = [&] {
    Vec3 v(g(rng), g(rng), g(rng));
    return Vec3(v.normalized());
  };
  ExtrinsicState out = e;
  for (Eye eye : {Eye::Left, Eye::Right}) {
    const Vec3 phi = direction() * rotation_deg * std::numbers::pi / 180.0;
    out[eye].q_CB = apply_quat_error(phi, e[eye].q_CB);
    out[eye].p_CB = e[eye].p_CB + direction() * translation;
  }
  return out;
}

RunResult run_estimator(const Dataset& data, const Config& cfg) {
  const RunOptions& run = cfg.run;
  RunResult res;
  res.initial_extrinsics = data.calibration;
  if (run.extrinsic_perturb_rotation != 0.0 || run.extrinsic_perturb_translation != 0.0) {
    res.initial_extrinsics = perturb_extrinsics(data.calibration, run.extrinsic_perturb_rotation,
                                                run.extrinsic_perturb_translation, cfg.seed + 101);
  }

  std::unique_ptr<LoopDetector> detector;
  if (run.estimator.enable_loop_closure && data.loop_matches) {
    detector = std::make_unique<FileLoopDetector>(*data.loop_matches, run.estimator.loop);
  }

  const FrameRecord& first = data.frames.front();
  const double t0 = static_cast<double>(first.timestamp_ns) * 1e-9;
  ImuState initial = nearest_state(data.groundtruth, first.timestamp_ns).state;
  if (run.sample_initial_error) initial = sample_initial_state(initial, run.estimator.initial, cfg.seed + 202);
  Estimator est(run.estimator, initial, t0,
                res.initial_extrinsics, data.associations, std::move(detector));

  std::size_t next_imu = 0;
  for (const FrameRecord& f : data.frames) {
    // Feed every sample up to and including the first one at or after the frame.
    while (next_imu < data.imu.size()) {
      const ImuRecord& r = data.imu[next_imu];
      est.add_imu(r.sample);
      ++next_imu;
      if (r.timestamp_ns >= f.timestamp_ns) break;
    }
    static const std::vector<FrameObservation> none;
    const auto it = data.observations.find(f.id);
    const double t = static_cast<double>(f.timestamp_ns) * 1e-9;
    res.frames.push_back(est.process_frame(f.id, t, it == data.observations.end() ? none : it->second));
    res.extrinsics.emplace_back(t, est.state().extrinsics);
  }
  res.final_state = est.state();
  res.final_covariance = est.covariance();
  res.map = est.map();
  return res;
}

std::vector<TrajectoryPoint> trajectory_of(const RunResult& result) {
  std::vector<TrajectoryPoint> out;
  for (const FrameResult& f : result.frames) {
    TrajectoryPoint p;
    p.timestamp = f.timestamp;
    p.q = canonical(Quat(f.pose.R));
    p.p = f.pose.t;
    out.push_back(p);
  }
  return out;
}

void write_run_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_trajectory(dir / "trajectory.txt", trajectory_of(result));
  {
    auto os = open_out(dir / "reports.csv");
    os << "#timestamp,n_uv_rows,n_ray_rows,n_map_rows,residual_rms,cond_flag\n";
    for (const FrameResult& f : result.frames) write_report_line(os, f.report);
  }
  {
    auto os = open_out(dir / "pose_covariance.csv");
    os << "#timestamp,c00..c55 (row-major, [phi, p])\n";
    for (const FrameResult& f : result.frames) {
      os << f.timestamp;
      for (int i = 0; i < 36; ++i) os << ',' << f.pose_covariance(i / 6, i % 6);
      os << '\n';
    }
  }
  {
    auto os = open_out(dir / "extrinsics.csv");
    os << "#timestamp,eye,qw,qx,qy,qz,px,py,pz\n";
    for (const auto& [t, e] : result.extrinsics) {
      for (Eye eye : {Eye::Left, Eye::Right}) {
        const CameraExtrinsic& c = e[eye];
        os << t << ',' << static_cast<int>(eye) << ',' << c.q_CB.w() << ',' << c.q_CB.x() << ','
           << c.q_CB.y() << ',' << c.q_CB.z() << ',' << c.p_CB.x() << ',' << c.p_CB.y() << ','
           << c.p_CB.z() << '\n';
      }
    }
  }
  {
    auto os = open_out(dir / "keyframes.txt");
    result.map.write(os);
  }
}

Metrics evaluate(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                 const EvalOptions& opts, const std::vector<std::pair<double, Mat6>>* covariances) {
  Metrics m;
  m.ate = ate(est, ref, opts.align, opts.max_dt);
  m.rpe = rpe(est, ref, opts.segments, opts.max_dt);
  if (covariances && !covariances->empty()) {
    std::vector<TrajectoryPoint> cov_times;
    for (const auto& [t, P] : *covariances) cov_times.push_back({t, Quat::Identity(), Vec3::Zero()});
    std::vector<Pose> e, g;
    std::vector<Mat6> P;
    // Covariance rows are matched to estimate poses, then to the reference.
    const auto est_ref = associate(est, ref, opts.max_dt);
    std::map<std::size_t, std::size_t> est_to_ref(est_ref.begin(), est_ref.end());
    for (const auto& [ci, ei] : associate(cov_times, est, 1e-6)) {
      const auto r = est_to_ref.find(ei);
      if (r == est_to_ref.end()) continue;
      e.push_back(est[ei].pose());
      g.push_back(ref[r->second].pose());
      P.push_back((*covariances)[ci].second);
    }
    if (e.empty()) throw InputError("no covariance rows match the estimate timestamps");
    m.nees = nees(e, P, g);
  }
  return m;
}

void write_metrics(const Metrics& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir / "metrics.csv");
    os << "metric,value\n";
    os << "ate_rmse," << m.ate.rmse << "\nate_mean," << m.ate.mean << "\nate_max," << m.ate.max
       << "\nate_count," << m.ate.count << '\n';
    if (m.nees) os << "nees_mean," << m.nees->mean << '\n';
  }
  {
    auto os = open_out(dir / "rpe.csv");
    os << "length,count,trans_mean,trans_rmse,rot_mean_deg,rot_rmse_deg\n";
    for (const RpeStats& s : m.rpe) {
      os << s.length << ',' << s.count << ',' << s.trans_mean << ',' << s.trans_rmse << ','
         << s.rot_mean << ',' << s.rot_rmse << '\n';
    }
  }
  {
    auto os = open_out(dir / "ate_errors.csv");
    os << "index,error\n";
    for (std::size_t i = 0; i < m.ate.errors.size(); ++i) os << i << ',' << m.ate.errors[i] << '\n';
  }
  if (m.nees) {
    auto os = open_out(dir / "nees.csv");
    os << "index,nees\n";
    for (std::size_t i = 0; i < m.nees->per_frame.size(); ++i) os << i << ',' << m.nees->per_frame[i] << '\n';
  }
}

void print_metrics(std::ostream& os, const Metrics& m) {
  os << "ATE rmse " << m.ate.rmse << " m over " << m.ate.count << " poses\n";
  for (const RpeStats& s : m.rpe) {
    os << "RPE " << s.length << " m: " << s.count << " segments, trans rmse " << s.trans_rmse
       << " m, rot rmse " << s.rot_rmse << " deg\n";
  }
  if (m.nees) os << "NEES mean " << m.nees->mean << " over " << m.nees->per_frame.size() << " frames\n";
}

}  // namespace spvins
