#include "spvins/simulator.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <stdexcept>

namespace spvins {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

}  // namespace

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "circle") return TrajectoryKind::Circle;
  if (s == "figure-eight" || s == "figure_eight") return TrajectoryKind::FigureEight;
  if (s == "waypoint-spline" || s == "waypoint_spline") return TrajectoryKind::WaypointSpline;
  throw std::invalid_argument("unknown trajectory kind '" + s + "'");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Circle:
      return "circle";
    case TrajectoryKind::FigureEight:
      return "figure-eight";
    case TrajectoryKind::WaypointSpline:
      return "waypoint-spline";
  }
  return "?";
}

Trajectory::Trajectory(const TrajectorySpec& spec, Vec3 gravity)
    : spec_(spec), gravity_(std::move(gravity)) {
  if (!(spec.duration > 0.0)) throw std::invalid_argument("trajectory duration must be positive");
  if (spec.speed < 0.0) throw std::invalid_argument("trajectory speed must be non-negative");
  if (spec.kind == TrajectoryKind::WaypointSpline) {
    // Perturbed ring of control points; the spline through them is closed.
    auto rng = stream(spec.seed, 11);
    std::uniform_real_distribution<double> radius(0.7, 1.3), dz(-0.05, 0.05);
    const int n = 8;
    for (int i = 0; i < n; ++i) {
      const double a = kTwoPi * i / n;
      const double r = radius(rng);
      waypoints_.push_back(Vec3(r * std::cos(a), r * std::sin(a), dz(rng)));
    }
  }
  // Scale the unit shape so the mean speed over the duration covers the laps.
  const double laps = spec.loop_revisit ? 2.0 : 0.9;
  const int n = 4000;
  double perimeter = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec3 d = shape(kTwoPi * (i + 0.5) / n).df;
    perimeter += d.head<2>().norm() * kTwoPi / n;
  }
  rate_ = kTwoPi * laps / spec.duration;
  scale_ = spec.speed > 0.0 ? spec.speed * spec.duration / (laps * perimeter) : 10.0;
  if (spec.speed == 0.0) rate_ = 0.0;
}

double Trajectory::lap_time() const {
  return rate_ > 0.0 ? kTwoPi / rate_ : std::numeric_limits<double>::infinity();
}

Trajectory::Shape Trajectory::shape(double th) const {
  Shape s;
  const double c = std::cos(th), sn = std::sin(th);
  switch (spec_.kind) {
    case TrajectoryKind::Circle:
      s.f = Vec3(c, sn, 0.0);
      s.df = Vec3(-sn, c, 0.0);
      s.ddf = Vec3(-c, -sn, 0.0);
      break;
    case TrajectoryKind::FigureEight: {
      // Lemniscate of Gerono: x = sin, y = sin cos = sin(2th) / 2.
      const double c2 = std::cos(2.0 * th), s2 = std::sin(2.0 * th);
      s.f = Vec3(sn, 0.5 * s2, 0.0);
      s.df = Vec3(c, c2, 0.0);
      s.ddf = Vec3(-sn, -2.0 * s2, 0.0);
      break;
    }
    case TrajectoryKind::WaypointSpline: {
      // Uniform periodic cubic B-spline.
      const int n = static_cast<int>(waypoints_.size());
      const double u = th / kTwoPi * n;
      const double fl = std::floor(u);
      const double t = u - fl;
      const int i = static_cast<int>(fl);
      auto cp = [&](int k) { return waypoints_[((k % n) + n) % n]; };
      const Vec3 p0 = cp(i - 1), p1 = cp(i), p2 = cp(i + 1), p3 = cp(i + 2);
      const double t2 = t * t, t3 = t2 * t;
      const double du = n / kTwoPi;
      s.f = ((1 - t) * (1 - t) * (1 - t) * p0 + (3 * t3 - 6 * t2 + 4) * p1 +
             (-3 * t3 + 3 * t2 + 3 * t + 1) * p2 + t3 * p3) /
            6.0;
      s.df = (-3 * (1 - t) * (1 - t) * p0 + (9 * t2 - 12 * t) * p1 + (-9 * t2 + 6 * t + 3) * p2 +
              3 * t2 * p3) /
             6.0 * du;
      s.ddf = (6 * (1 - t) * p0 + (18 * t - 12) * p1 + (-18 * t + 6) * p2 + 6 * t * p3) / 6.0 *
              du * du;
      // The spline's own height variation rides on top of the vertical wave below.
      break;
    }
  }
  return s;
}

Kinematics Trajectory::at(double t) const {
  Kinematics k;
  k.t = t;
  const double w = rate_;
  const double th = w * t;
  const Shape s = shape(th);
  const double A = spec_.vertical_amplitude, B = spec_.attitude_wobble;

  // Position: scaled shape plus a vertical wave with three periods per lap.
  Vec3 f = scale_ * s.f, df = scale_ * s.df, ddf = scale_ * s.ddf;
  f.z() += spec_.height + A * std::sin(3.0 * th);
  df.z() += 3.0 * A * std::cos(3.0 * th);
  ddf.z() += -9.0 * A * std::sin(3.0 * th);
  k.pose.t = f;
  k.velocity = df * w;
  k.acceleration = ddf * w * w;

  // Z-Y-X Euler angles: yaw along the horizontal tangent, periodic roll/pitch.
  const double hx = s.df.x(), hy = s.df.y();
  const double yaw = std::atan2(hy, hx);
  const double yaw_rate = w * (hx * s.ddf.y() - hy * s.ddf.x()) / (hx * hx + hy * hy);
  const double roll = B * std::sin(5.0 * th);
  const double roll_rate = 5.0 * B * w * std::cos(5.0 * th);
  const double pitch = B * std::sin(7.0 * th + 1.0);
  const double pitch_rate = 7.0 * B * w * std::cos(7.0 * th + 1.0);
  k.pose.R = rot_z(yaw) * rot_y(pitch) * rot_x(roll);

  const double sr = std::sin(roll), cr = std::cos(roll), sp = std::sin(pitch), cp = std::cos(pitch);
  k.omega_body = Vec3(roll_rate - yaw_rate * sp, pitch_rate * cr + yaw_rate * sr * cp,
                      -pitch_rate * sr + yaw_rate * cr * cp);
  k.specific_force = k.pose.R.transpose() * (k.acceleration - gravity_);
  return k;
}

ExtrinsicState WorldSpec::default_extrinsics(double baseline) {
  Mat3 R_BC;
  R_BC << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  ExtrinsicState e;
  for (Eye eye : {Eye::Left, Eye::Right}) {
    const Vec3 t_BC(0.05, eye == Eye::Left ? 0.5 * baseline : -0.5 * baseline, 0.02);
    e[eye].q_CB = canonical(Quat(Mat3(R_BC.transpose())));
    e[eye].p_CB = -R_BC.transpose() * t_BC;
  }
  return e;
}

double ns_to_seconds(std::int64_t ns) { return static_cast<double>(ns) * 1e-9; }

std::vector<Vec3> generate_landmarks(const Trajectory& traj, const WorldSpec& world,
                                     std::uint64_t seed) {
  // Path samples over the whole run (covers partial laps too).
  std::vector<Vec3> path;
  const int n_path = 1000;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int i = 0; i <= n_path; ++i) {
    const Vec3 p = traj.at(traj.duration() * i / n_path).pose.t;
    path.push_back(p);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo.head<2>().array() -= world.margin;
  hi.head<2>().array() += world.margin;
  lo.z() = world.z_min;
  hi.z() = world.z_max;

  auto rng = stream(seed, 21);
  std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()), uz(lo.z(), hi.z());
  std::vector<Vec3> out;
  const double d2 = world.min_path_distance * world.min_path_distance;
  int attempts = 0;
  while (static_cast<int>(out.size()) < world.n_landmarks) {
    if (++attempts > 1000 * std::max(world.n_landmarks, 1)) {
      throw std::runtime_error("cannot place landmarks away from the path");
    }
    const Vec3 X(ux(rng), uy(rng), uz(rng));
    bool ok = true;
    for (const Vec3& p : path) {
      if ((X - p).squaredNorm() < d2) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(X);
  }
  return out;
}

std::vector<ImuSample> sim_imu(const Trajectory& traj, const WorldSpec& world, std::uint64_t seed,
                               std::vector<std::int64_t>* timestamps_ns,
                               std::vector<std::pair<Vec3, Vec3>>* biases) {
  if (!(world.imu_rate > 0.0)) throw std::invalid_argument("imu rate must be positive");
  const auto period = static_cast<std::int64_t>(std::llround(1e9 / world.imu_rate));
  const double dt = ns_to_seconds(period);
  const auto end = static_cast<std::int64_t>(std::llround(traj.duration() * 1e9));
  auto rng = stream(seed, 31);
  std::normal_distribution<double> g;
  auto gauss3 = [&] { return Vec3(g(rng), g(rng), g(rng)); };
  const NoiseDensities& n = world.imu_noise;
  Vec3 bg = world.initial_gyro_bias, ba = world.initial_accel_bias;
  std::vector<ImuSample> out;
  if (timestamps_ns) timestamps_ns->clear();
  if (biases) biases->clear();
  for (std::int64_t ns = 0; ns <= end; ns += period) {
    const double t = ns_to_seconds(ns);
    const Kinematics k = traj.at(t);
    ImuSample s;
    s.timestamp = t;
    s.omega = k.omega_body + bg;
    s.accel = k.specific_force + ba;
    if (n.sigma_g > 0.0) s.omega += n.sigma_g / std::sqrt(dt) * gauss3();
    if (n.sigma_a > 0.0) s.accel += n.sigma_a / std::sqrt(dt) * gauss3();
    out.push_back(s);
    if (timestamps_ns) timestamps_ns->push_back(ns);
    if (biases) biases->emplace_back(bg, ba);
    if (n.sigma_wg > 0.0) bg += n.sigma_wg * std::sqrt(dt) * gauss3();
    if (n.sigma_wa > 0.0) ba += n.sigma_wa * std::sqrt(dt) * gauss3();
  }
  return out;
}

SimulatedDataset simulate(const TrajectorySpec& spec, const WorldSpec& world) {
  if (!(world.camera_rate > 0.0)) throw std::invalid_argument("camera rate must be positive");
  if (world.pixel_sigma < 0.0 || world.outlier_rate < 0.0 || world.outlier_rate > 1.0) {
    throw std::invalid_argument("noise parameters out of range");
  }
  const Trajectory traj(spec);
  SimulatedDataset data;
  data.extrinsics = world.extrinsics;
  data.landmarks = generate_landmarks(traj, world, spec.seed);
  std::vector<std::pair<Vec3, Vec3>> biases;
  data.imu = sim_imu(traj, world, spec.seed, &data.imu_timestamps_ns, &biases);

  const auto imu_period = static_cast<std::int64_t>(std::llround(1e9 / world.imu_rate));
  const auto cam_period = static_cast<std::int64_t>(std::llround(1e9 / world.camera_rate));
  const auto end = static_cast<std::int64_t>(std::llround(spec.duration * 1e9));

  auto rng = stream(spec.seed, 41);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ufov(-world.max_coordinate, world.max_coordinate);

  std::vector<TrackId> current(data.landmarks.size(), -1);
  TrackId next_track = 0;
  FrameId frame_id = 0;
  for (std::int64_t ns = 0; ns <= end; ns += cam_period, ++frame_id) {
    const Kinematics k = traj.at(ns_to_seconds(ns));
    data.frames.push_back({frame_id, ns});
    GroundTruthSample gt;
    gt.timestamp_ns = ns;
    gt.state.q_GB = canonical(Quat(k.pose.R));
    gt.state.p_GB = k.pose.t;
    gt.state.v_GB = k.velocity;
    const std::size_t bi = std::min<std::size_t>(static_cast<std::size_t>(ns / imu_period),
                                                 biases.size() - 1);
    gt.state.bg = biases[bi].first;
    gt.state.ba = biases[bi].second;
    data.groundtruth.push_back(gt);

    const Pose cams[2] = {world.extrinsics.left.camera_pose(k.pose),
                          world.extrinsics.right.camera_pose(k.pose)};
    for (std::size_t li = 0; li < data.landmarks.size(); ++li) {
      Vec2 uv[2];
      bool vis[2];
      for (int e = 0; e < 2; ++e) {
        const Vec3 c = cams[e].R.transpose() * (data.landmarks[li] - cams[e].t);
        vis[e] = c.z() >= world.min_depth && c.z() <= world.max_depth;
        if (vis[e]) {
          uv[e] = c.head<2>() / c.z();
          vis[e] = std::abs(uv[e].x()) <= world.max_coordinate &&
                   std::abs(uv[e].y()) <= world.max_coordinate;
        }
      }
      if (!vis[0]) {
        current[li] = -1;
        continue;
      }
      if (current[li] < 0) {
        current[li] = next_track++;
        data.associations[current[li]] = static_cast<AssociationKey>(li);
      }
      for (int e = 0; e < 2; ++e) {
        if (!vis[e]) continue;
        SimObservation o;
        o.frame = frame_id;
        o.eye = e == 0 ? Eye::Left : Eye::Right;
        o.track = current[li];
        o.uv = uv[e];
        if (world.pixel_sigma > 0.0) o.uv += world.pixel_sigma * Vec2(g(rng), g(rng));
        if (world.outlier_rate > 0.0 && u01(rng) < world.outlier_rate) {
          o.uv = Vec2(ufov(rng), ufov(rng));
          o.outlier = true;
        }
        data.observations.push_back(o);
      }
    }
  }
  return data;
}

void write_dataset(const SimulatedDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    os << std::setprecision(17);
    return os;
  };
  {
    auto os = open("imu.csv");
    os << "#timestamp_ns,wx,wy,wz,ax,ay,az\n";
    for (std::size_t i = 0; i < data.imu.size(); ++i) {
      const ImuSample& s = data.imu[i];
      os << data.imu_timestamps_ns[i] << ',' << s.omega.x() << ',' << s.omega.y() << ','
         << s.omega.z() << ',' << s.accel.x() << ',' << s.accel.y() << ',' << s.accel.z() << '\n';
    }
  }
  {
    auto os = open("frames.csv");
    os << "#frame_id,timestamp_ns\n";
    for (const SimFrame& f : data.frames) os << f.id << ',' << f.timestamp_ns << '\n';
  }
  {
    auto os = open("tracks.csv");
    auto labels = open("outliers.csv");
    os << "#frame_id,eye,track_id,u,v\n";
    labels << "#frame_id,eye,track_id\n";
    for (const SimObservation& o : data.observations) {
      os << o.frame << ',' << static_cast<int>(o.eye) << ',' << o.track << ',' << o.uv.x() << ','
         << o.uv.y() << '\n';
      if (o.outlier) labels << o.frame << ',' << static_cast<int>(o.eye) << ',' << o.track << '\n';
    }
  }
  {
    auto os = open("associations.csv");
    os << "#track_id,association_key\n";
    for (const auto& [track, key] : data.associations) os << track << ',' << key << '\n';
  }
  {
    auto os = open("landmarks.csv");
    os << "#id,x,y,z\n";
    for (std::size_t i = 0; i < data.landmarks.size(); ++i) {
      const Vec3& X = data.landmarks[i];
      os << i << ',' << X.x() << ',' << X.y() << ',' << X.z() << '\n';
    }
  }
  {
    auto os = open("calibration.csv");
    os << "#eye,qw,qx,qy,qz,px,py,pz\n";
    for (Eye e : {Eye::Left, Eye::Right}) {
      const CameraExtrinsic& c = data.extrinsics[e];
      os << static_cast<int>(e) << ',' << c.q_CB.w() << ',' << c.q_CB.x() << ',' << c.q_CB.y()
         << ',' << c.q_CB.z() << ',' << c.p_CB.x() << ',' << c.p_CB.y() << ',' << c.p_CB.z()
         << '\n';
    }
  }
  {
    auto os = open("groundtruth.txt");
    for (const GroundTruthSample& g : data.groundtruth) {
      write_pose_line(os, ns_to_seconds(g.timestamp_ns), g.state.q_GB, g.state.p_GB);
    }
  }
  {
    auto os = open("groundtruth_state.csv");
    os << "#timestamp_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz\n";
    for (const GroundTruthSample& g : data.groundtruth) {
      const ImuState& s = g.state;
      os << g.timestamp_ns << ',' << s.p_GB.x() << ',' << s.p_GB.y() << ',' << s.p_GB.z() << ','
         << s.q_GB.w() << ',' << s.q_GB.x() << ',' << s.q_GB.y() << ',' << s.q_GB.z() << ','
         << s.v_GB.x() << ',' << s.v_GB.y() << ',' << s.v_GB.z() << ',' << s.bg.x() << ','
         << s.bg.y() << ',' << s.bg.z() << ',' << s.ba.x() << ',' << s.ba.y() << ',' << s.ba.z()
         << '\n';
    }
  }
}

}  // namespace spvins
