#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "spvins/config.hpp"
#include "spvins/estimator.hpp"
#include "spvins/io.hpp"

namespace spvins {

/// Everything `run` reads from a dataset directory.
struct Dataset {
  std::vector<ImuRecord> imu;
  std::vector<FrameRecord> frames;
  std::map<FrameId, std::vector<FrameObservation>> observations;
  std::map<TrackId, AssociationKey> associations;
  ExtrinsicState calibration;
  std::vector<StateRecord> groundtruth;  // used for initialization
  std::optional<std::vector<LoopMatchRow>> loop_matches;
};

/// Reads imu.csv, frames.csv, tracks.csv, calibration.csv and
/// groundtruth_state.csv; associations.csv and loop_matches.csv are optional.
Dataset load_dataset(const std::filesystem::path& dir);

struct RunResult {
  std::vector<FrameResult> frames;
  std::vector<std::pair<double, ExtrinsicState>> extrinsics;  // per frame
  ExtrinsicState initial_extrinsics;
  FullState final_state;
  Covariance final_covariance;
  ImplicitMap map;
};

/// Rotates and shifts each camera of `e` by the given magnitudes along
/// directions drawn from `seed`.
ExtrinsicState perturb_extrinsics(const ExtrinsicState& e, double rotation_deg, double translation,
                                  std::uint64_t seed);

/// Filters the dataset from the ground-truth state at the first frame.
RunResult run_estimator(const Dataset& data, const Config& cfg);

/// trajectory.txt, reports.csv, pose_covariance.csv, extrinsics.csv, keyframes.txt.
void write_run_outputs(const RunResult& result, const std::filesystem::path& dir);

std::vector<TrajectoryPoint> trajectory_of(const RunResult& result);

struct Metrics {
  AteResult ate;
  std::vector<RpeStats> rpe;
  std::optional<NeesResult> nees;
};

/// ATE and RPE of `est` against `ref`; NEES when per-frame pose covariances
/// (timestamp plus 36 row-major values) and ground-truth states are given.
Metrics evaluate(const std::vector<TrajectoryPoint>& est, const std::vector<TrajectoryPoint>& ref,
                 const EvalOptions& opts,
                 const std::vector<std::pair<double, Mat6>>* covariances = nullptr);

/// metrics.csv, rpe.csv, ate_errors.csv and (when available) nees.csv.
void write_metrics(const Metrics& m, const std::filesystem::path& dir);
void print_metrics(std::ostream& os, const Metrics& m);

}  // namespace spvins
