#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "spvins/estimator.hpp"
#include "spvins/evaluation.hpp"
#include "spvins/simulator.hpp"

namespace spvins {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  EstimatorOptions estimator;
  double extrinsic_perturb_rotation = 0.0;     // deg, applied to the dataset calibration
  double extrinsic_perturb_translation = 0.0;  // m
  /// Start from a draw of the initial covariance instead of the ground-truth
  /// state, as Monte-Carlo consistency runs require.
  bool sample_initial_error = false;
};

struct EvalOptions {
  AlignMode align = AlignMode::SE3;
  std::vector<double> segments = kDefaultSegments;
  double max_dt = 0.02;  // s
};

struct Config {
  std::uint64_t seed = 1;
  TrajectorySpec trajectory;
  WorldSpec world;
  RunOptions run;
  EvalOptions eval;
};

/// Defaults with the seed propagated to every stream that takes one.
Config default_config();

/// INI file with [general], [sim], [imu], [filter], [loop] and [eval] sections.
/// Unknown sections or keys and unparsable values are errors.
Config load_config(const std::filesystem::path& path);

/// Applies one "section.key=value" override.
void apply_override(Config& cfg, const std::string& assignment);

/// Re-derives dependent fields (seeds, shared noise) and checks ranges.
void finalize(Config& cfg);

/// Writes every key with its current value, loadable by load_config.
void write_config(std::ostream& os, const Config& cfg);

}  // namespace spvins
