#include "spvins/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace spvins {

namespace {

struct Entry {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
T parse_value(const std::string& s) {
  try {
    return boost::lexical_cast<T>(boost::trim_copy(s));
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("cannot parse '" + s + "'");
  }
}

template <>
bool parse_value<bool>(const std::string& s) {
  const std::string v = boost::to_lower_copy(boost::trim_copy(s));
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  std::vector<double> out;
  for (const std::string& p : parts) {
    if (!boost::trim_copy(p).empty()) out.push_back(parse_value<double>(p));
  }
  return out;
}

std::string format(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format(v[i]);
  return out;
}

Vec3 parse_vec3(const std::string& s) {
  const std::vector<double> v = parse_list(s);
  if (v.size() != 3) throw ConfigError("expected three comma-separated values: '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::string format_vec3(const Vec3& v) { return format_list({v.x(), v.y(), v.z()}); }

template <typename T>
Entry scalar(const std::string& section, const std::string& key, T& ref) {
  return {section, key, [&ref](const std::string& s) { ref = parse_value<T>(s); },
          [&ref] {
            if constexpr (std::is_same_v<T, bool>) return std::string(ref ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return format(ref);
            else return std::to_string(ref);
          }};
}

std::vector<Entry> registry(Config& c) {
  EstimatorOptions& e = c.run.estimator;
  std::vector<Entry> r = {
      scalar("general", "seed", c.seed),

      {"sim", "trajectory", [&c](const std::string& s) {
         try {
           c.trajectory.kind = parse_trajectory_kind(boost::trim_copy(s));
         } catch (const std::invalid_argument& ex) {
           throw ConfigError(ex.what());
         }
       }, [&c] { return to_string(c.trajectory.kind); }},
      scalar("sim", "duration", c.trajectory.duration),
      scalar("sim", "speed", c.trajectory.speed),
      scalar("sim", "loop_revisit", c.trajectory.loop_revisit),
      scalar("sim", "height", c.trajectory.height),
      scalar("sim", "vertical_amplitude", c.trajectory.vertical_amplitude),
      scalar("sim", "attitude_wobble", c.trajectory.attitude_wobble),
      scalar("sim", "n_landmarks", c.world.n_landmarks),
      scalar("sim", "margin", c.world.margin),
      scalar("sim", "z_min", c.world.z_min),
      scalar("sim", "z_max", c.world.z_max),
      scalar("sim", "min_path_distance", c.world.min_path_distance),
      {"sim", "baseline", [&c](const std::string& s) {
         const double b = parse_value<double>(s);
         if (!(b > 0.0)) throw ConfigError("baseline must be positive");
         c.world.extrinsics = WorldSpec::default_extrinsics(b);
       }, [&c] {
         return format((c.world.extrinsics.left.body_from_camera().t -
                        c.world.extrinsics.right.body_from_camera().t).norm());
       }},
      scalar("sim", "pixel_sigma", c.world.pixel_sigma),
      scalar("sim", "outlier_rate", c.world.outlier_rate),
      scalar("sim", "imu_rate", c.world.imu_rate),
      scalar("sim", "camera_rate", c.world.camera_rate),
      {"sim", "initial_gyro_bias", [&c](const std::string& s) { c.world.initial_gyro_bias = parse_vec3(s); },
       [&c] { return format_vec3(c.world.initial_gyro_bias); }},
      {"sim", "initial_accel_bias", [&c](const std::string& s) { c.world.initial_accel_bias = parse_vec3(s); },
       [&c] { return format_vec3(c.world.initial_accel_bias); }},

      scalar("imu", "sigma_g", c.world.imu_noise.sigma_g),
      scalar("imu", "sigma_a", c.world.imu_noise.sigma_a),
      scalar("imu", "sigma_wg", c.world.imu_noise.sigma_wg),
      scalar("imu", "sigma_wa", c.world.imu_noise.sigma_wa),

      scalar("filter", "max_clones", e.state.max_clones),
      scalar("filter", "max_keyframes", e.state.max_keyframes),
      scalar("filter", "pixel_sigma", e.pixel_sigma),
      scalar("filter", "chi2_level", e.gate.level),
      scalar("filter", "update_iterations", e.update_iterations),
      scalar("filter", "update_tolerance", e.update_tolerance),
      scalar("filter", "min_parallax", e.residuals.vision.min_parallax),
      scalar("filter", "enable_ray_residuals", e.residuals.use_ray),
      scalar("filter", "max_ray_relative_sigma", e.residuals.max_ray_relative_sigma),
      scalar("filter", "enable_extrinsic_calibration", e.residuals.vision.calibrate_extrinsics),
      scalar("filter", "enable_loop_closure", e.enable_loop_closure),
      scalar("filter", "init_sigma_attitude", e.initial.attitude),
      scalar("filter", "init_sigma_velocity", e.initial.velocity),
      scalar("filter", "init_sigma_position", e.initial.position),
      scalar("filter", "init_sigma_gyro_bias", e.initial.gyro_bias),
      scalar("filter", "init_sigma_accel_bias", e.initial.accel_bias),
      scalar("filter", "init_sigma_extrinsic_rotation", e.initial.extrinsic_rotation),
      scalar("filter", "init_sigma_extrinsic_translation", e.initial.extrinsic_translation),
      scalar("filter", "extrinsic_perturb_rotation_deg", c.run.extrinsic_perturb_rotation),
      scalar("filter", "extrinsic_perturb_translation", c.run.extrinsic_perturb_translation),
      scalar("filter", "sample_initial_error", c.run.sample_initial_error),

      scalar("loop", "query_interval", e.loop_query_interval),
      scalar("loop", "min_time_gap", e.loop.min_time_gap),
      scalar("loop", "keypoint_sigma_scale", e.residuals.map_keypoint_sigma_scale),
      scalar("loop", "min_shared", e.loop.min_shared),
      scalar("loop", "max_candidates", e.loop.max_candidates),
      scalar("loop", "false_positive_rate", e.loop.false_positive_rate),
      scalar("loop", "covisible_min_shared", e.covisible_min_shared),
      scalar("loop", "min_inliers", e.verify.min_inliers),
      scalar("loop", "ransac_max_iterations", e.verify.ransac.max_iterations),
      scalar("loop", "ransac_confidence", e.verify.ransac.confidence),
      scalar("loop", "epipolar_threshold", e.verify.ransac.epipolar_threshold),
      scalar("loop", "reprojection_threshold", e.verify.ransac.reprojection_threshold),
      scalar("loop", "keyframe_parallax", e.keyframe.parallax),
      scalar("loop", "keyframe_min_tracked", e.keyframe.min_tracked),
      scalar("loop", "keyframe_pose_delta", e.keyframe.pose_delta),

      {"eval", "align", [&c](const std::string& s) {
         try {
           c.eval.align = parse_align_mode(boost::trim_copy(s));
         } catch (const std::invalid_argument& ex) {
           throw ConfigError(ex.what());
         }
       }, [&c] {
         return std::string(c.eval.align == AlignMode::SE3      ? "se3"
                            : c.eval.align == AlignMode::PosYaw ? "posyaw"
                                                                : "none");
       }},
      {"eval", "segments", [&c](const std::string& s) { c.eval.segments = parse_list(s); },
       [&c] { return format_list(c.eval.segments); }},
      scalar("eval", "max_dt", c.eval.max_dt),
  };
  return r;
}

void set_key(Config& cfg, const std::string& section, const std::string& key, const std::string& value) {
  for (Entry& e : registry(cfg)) {
    if (e.section == section && e.key == key) {
      try {
        e.set(value);
      } catch (const ConfigError& ex) {
        throw ConfigError(section + "." + key + ": " + ex.what());
      }
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + section + "." + key + "'");
}

}  // namespace

Config default_config() {
  Config c;
  finalize(c);
  return c;
}

void finalize(Config& c) {
  c.trajectory.seed = c.seed;
  c.run.estimator.loop.seed = c.seed * 7919 + 7;
  c.run.estimator.verify.ransac.seed = c.seed;
  c.run.estimator.imu_noise = c.world.imu_noise;

  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.trajectory.duration > 0.0, "sim.duration must be positive");
  require(c.trajectory.speed >= 0.0, "sim.speed must be non-negative");
  require(c.world.n_landmarks >= 0, "sim.n_landmarks must be non-negative");
  require(c.world.pixel_sigma >= 0.0, "sim.pixel_sigma must be non-negative");
  require(c.world.outlier_rate >= 0.0 && c.world.outlier_rate <= 1.0, "sim.outlier_rate must be in [0, 1]");
  require(c.world.imu_rate > 0.0 && c.world.camera_rate > 0.0, "sensor rates must be positive");
  require(c.world.imu_noise.sigma_g >= 0.0 && c.world.imu_noise.sigma_a >= 0.0 &&
              c.world.imu_noise.sigma_wg >= 0.0 && c.world.imu_noise.sigma_wa >= 0.0,
          "imu noise densities must be non-negative");
  const EstimatorOptions& e = c.run.estimator;
  require(e.state.max_clones >= 2, "filter.max_clones must be at least 2");
  require(e.state.max_keyframes >= 1, "filter.max_keyframes must be at least 1");
  require(e.pixel_sigma > 0.0, "filter.pixel_sigma must be positive");
  require(e.gate.level > 0.0 && e.gate.level < 1.0, "filter.chi2_level must be in (0, 1)");
  require(e.loop_query_interval >= 1, "loop.query_interval must be at least 1");
  require(e.verify.min_inliers >= 6, "loop.min_inliers must be at least 6");
  require(!c.eval.segments.empty(), "eval.segments must not be empty");
  for (double s : c.eval.segments) require(s > 0.0, "eval.segments must be positive");
}

Config load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& ex) {
    throw ConfigError(ex.what());
  }
  Config cfg;
  for (const auto& [section, keys] : tree) {
    if (keys.empty()) throw ConfigError(path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : keys) {
      try {
        set_key(cfg, section, key, value.data());
      } catch (const ConfigError& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
      }
    }
  }
  finalize(cfg);
  return cfg;
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  }
  set_key(cfg, boost::trim_copy(assignment.substr(0, dot)),
          boost::trim_copy(assignment.substr(dot + 1, eq - dot - 1)), assignment.substr(eq + 1));
  finalize(cfg);
}

void write_config(std::ostream& os, const Config& cfg) {
  Config copy = cfg;
  std::string section;
  for (const Entry& e : registry(copy)) {
    if (e.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << e.section << "]\n";
      section = e.section;
    }
    os << e.key << " = " << e.get() << '\n';
  }
}

}  // namespace spvins
