#include "spvins/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace spvins {

namespace {

/// Iterates the data lines of a text file, skipping blanks and '#' comments.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path), is_(path) {
    if (!is_) throw InputError("cannot open " + path.string());
  }

  bool next(std::vector<std::string>& fields, char sep) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      fields.clear();
      if (sep == ' ') {
        std::istringstream ss(line);
        std::string f;
        while (ss >> f) fields.push_back(f);
      } else {
        std::string f;
        std::istringstream ss(line);
        while (std::getline(ss, f, sep)) {
          const auto b = f.find_first_not_of(" \t"), e = f.find_last_not_of(" \t");
          fields.push_back(b == std::string::npos ? std::string() : f.substr(b, e - b + 1));
        }
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  void expect(const std::vector<std::string>& fields, std::size_t n) const {
    if (fields.size() != n) {
      fail("expected " + std::to_string(n) + " fields, got " + std::to_string(fields.size()));
    }
  }

  template <typename T>
  T integer(const std::string& s) const {
    T v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail("not an integer: '" + s + "'");
    return v;
  }

  double real(const std::string& s) const {
    // strtod round-trips the 17-digit output of the writers exactly.
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      fail("not a finite number: '" + s + "'");
    }
    return v;
  }

 private:
  std::filesystem::path path_;
  std::ifstream is_;
  int line_no_ = 0;
};

}  // namespace

std::vector<ImuRecord> read_imu_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<ImuRecord> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 7);
    ImuRecord rec;
    rec.timestamp_ns = r.integer<std::int64_t>(f[0]);
    if (!out.empty() && rec.timestamp_ns <= out.back().timestamp_ns) r.fail("timestamps must increase");
    rec.sample.timestamp = static_cast<double>(rec.timestamp_ns) * 1e-9;
    rec.sample.omega = Vec3(r.real(f[1]), r.real(f[2]), r.real(f[3]));
    rec.sample.accel = Vec3(r.real(f[4]), r.real(f[5]), r.real(f[6]));
    out.push_back(rec);
  }
  return out;
}

std::vector<FrameRecord> read_frames_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<FrameRecord> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 2);
    FrameRecord rec{r.integer<FrameId>(f[0]), r.integer<std::int64_t>(f[1])};
    if (!out.empty() && rec.timestamp_ns <= out.back().timestamp_ns) r.fail("timestamps must increase");
    out.push_back(rec);
  }
  return out;
}

std::vector<TrackRecord> read_tracks_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<TrackRecord> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 5);
    TrackRecord rec;
    rec.frame = r.integer<FrameId>(f[0]);
    const int eye = r.integer<int>(f[1]);
    if (eye != 0 && eye != 1) r.fail("eye must be 0 or 1");
    rec.eye = eye == 0 ? Eye::Left : Eye::Right;
    rec.track = r.integer<TrackId>(f[2]);
    rec.uv = Vec2(r.real(f[3]), r.real(f[4]));
    out.push_back(rec);
  }
  return out;
}

std::map<TrackId, AssociationKey> read_associations_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::map<TrackId, AssociationKey> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 2);
    if (!out.emplace(r.integer<TrackId>(f[0]), r.integer<AssociationKey>(f[1])).second) {
      r.fail("duplicate track id");
    }
  }
  return out;
}

ExtrinsicState read_calibration_csv(const std::filesystem::path& path) {
  LineReader r(path);
  ExtrinsicState out;
  bool seen[2] = {false, false};
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 8);
    const int eye = r.integer<int>(f[0]);
    if (eye != 0 && eye != 1) r.fail("eye must be 0 or 1");
    Quat q(r.real(f[1]), r.real(f[2]), r.real(f[3]), r.real(f[4]));
    if (std::abs(q.norm() - 1.0) > 1e-6) r.fail("quaternion is not unit norm");
    CameraExtrinsic& c = out[eye == 0 ? Eye::Left : Eye::Right];
    c.q_CB = canonical(q);
    c.p_CB = Vec3(r.real(f[5]), r.real(f[6]), r.real(f[7]));
    seen[eye] = true;
  }
  if (!seen[0] || !seen[1]) throw InputError(path.string() + ": both cameras are required");
  return out;
}

std::vector<StateRecord> read_state_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<StateRecord> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 17);
    StateRecord rec;
    rec.timestamp_ns = r.integer<std::int64_t>(f[0]);
    std::array<double, 16> v{};
    for (int i = 0; i < 16; ++i) v[i] = r.real(f[i + 1]);
    rec.state.p_GB = Vec3(v[0], v[1], v[2]);
    rec.state.q_GB = canonical(Quat(v[3], v[4], v[5], v[6]));
    rec.state.v_GB = Vec3(v[7], v[8], v[9]);
    rec.state.bg = Vec3(v[10], v[11], v[12]);
    rec.state.ba = Vec3(v[13], v[14], v[15]);
    out.push_back(rec);
  }
  return out;
}

std::vector<LoopMatchRow> read_loop_matches_csv(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<LoopMatchRow> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 6);
    LoopMatchRow row;
    row.query_frame = r.integer<FrameId>(f[0]);
    row.match_keyframe = r.integer<KeyframeId>(f[1]);
    row.query_uv = Vec2(r.real(f[2]), r.real(f[3]));
    row.match_uv = Vec2(r.real(f[4]), r.real(f[5]));
    out.push_back(row);
  }
  return out;
}

std::vector<TrajectoryPoint> read_trajectory(const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<TrajectoryPoint> out;
  std::vector<std::string> f;
  while (r.next(f, ' ')) {
    r.expect(f, 8);
    TrajectoryPoint p;
    p.timestamp = r.real(f[0]);
    if (!out.empty() && p.timestamp <= out.back().timestamp) r.fail("timestamps must increase");
    p.p = Vec3(r.real(f[1]), r.real(f[2]), r.real(f[3]));
    const Quat q(r.real(f[7]), r.real(f[4]), r.real(f[5]), r.real(f[6]));
    if (std::abs(q.norm() - 1.0) > 1e-6) r.fail("quaternion is not unit norm");
    p.q = canonical(q);
    out.push_back(p);
  }
  return out;
}

std::vector<std::pair<double, Eigen::Matrix<double, 6, 6>>> read_pose_covariances(
    const std::filesystem::path& path) {
  LineReader r(path);
  std::vector<std::pair<double, Eigen::Matrix<double, 6, 6>>> out;
  std::vector<std::string> f;
  while (r.next(f, ',')) {
    r.expect(f, 37);
    Eigen::Matrix<double, 6, 6> P;
    for (int i = 0; i < 36; ++i) P(i / 6, i % 6) = r.real(f[i + 1]);
    out.emplace_back(r.real(f[0]), P);
  }
  return out;
}

void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& traj) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  for (const TrajectoryPoint& p : traj) write_pose_line(os, p.timestamp, p.q, p.p);
}

}  // namespace spvins
