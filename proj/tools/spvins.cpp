// spvins: simulate datasets, run the estimator, evaluate trajectories.
//
//   spvins simulate --out data/ [--config c.ini] [--set sim.duration=120]
//   spvins run --dataset data/ --out run/ [--set filter.enable_loop_closure=false]
//   spvins evaluate --est run/trajectory.txt --ref data/groundtruth.txt --out eval/
//                   [--cov run/pose_covariance.csv]
//
// Exit codes: 0 ok, 1 input or configuration error, 2 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spvins/config.hpp"
#include "spvins/pipeline.hpp"
#include "spvins/simulator.hpp"

namespace fs = std::filesystem;
using namespace spvins;

namespace {

Config make_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? default_config() : load_config(path);
  for (const std::string& o : overrides) apply_override(cfg, o);
  finalize(cfg);
  return cfg;
}

void save_config(const Config& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.ini");
  if (!os) throw InputError("cannot write " + (dir / "config.ini").string());
  write_config(os, cfg);
}

int cmd_simulate(const Config& cfg, const fs::path& out) {
  const SimulatedDataset data = simulate(cfg.trajectory, cfg.world);
  write_dataset(data, out);
  save_config(cfg, out);
  std::cout << "wrote " << data.frames.size() << " frames, " << data.imu.size() << " IMU samples, "
            << data.observations.size() << " observations to " << out.string() << '\n';
  return 0;
}

int cmd_run(const Config& cfg, const fs::path& dataset, const fs::path& out) {
  const Dataset data = load_dataset(dataset);
  const RunResult res = run_estimator(data, cfg);
  write_run_outputs(res, out);
  save_config(cfg, out);
  std::size_t keyframes = 0, loops = 0, map_rows = 0;
  for (const FrameResult& f : res.frames) {
    keyframes += f.keyframe ? 1 : 0;
    loops += static_cast<std::size_t>(f.loops);
    map_rows += static_cast<std::size_t>(f.report.n_map_rows);
  }
  std::cout << "processed " << res.frames.size() << " frames; " << keyframes << " keyframes, " << loops
            << " loop updates, " << map_rows << " map rows\n";
  const fs::path gt = dataset / "groundtruth.txt";
  if (fs::exists(gt)) {
    const auto cov = read_pose_covariances(out / "pose_covariance.csv");
    print_metrics(std::cout, evaluate(trajectory_of(res), read_trajectory(gt), cfg.eval, &cov));
  }
  return 0;
}

int cmd_evaluate(const Config& cfg, const fs::path& est, const fs::path& ref, const fs::path& cov_path,
                 const fs::path& out) {
  const auto e = read_trajectory(est);
  const auto r = read_trajectory(ref);
  std::optional<std::vector<std::pair<double, Mat6>>> cov;
  if (!cov_path.empty()) cov = read_pose_covariances(cov_path);
  const Metrics m = evaluate(e, r, cfg.eval, cov ? &*cov : nullptr);
  print_metrics(std::cout, m);
  if (!out.empty()) write_metrics(m, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SP-VINS: pose-only stereo visual-inertial estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out, dataset, est, ref, cov;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a key, section.key=value (repeatable)");
  };

  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  common(sim);
  sim->add_option("--out", out, "output dataset directory")->required();

  CLI::App* run = app.add_subcommand("run", "run the estimator on a dataset");
  common(run);
  run->add_option("--dataset", dataset, "dataset directory")->required();
  run->add_option("--out", out, "output directory")->required();

  CLI::App* ev = app.add_subcommand("evaluate", "ATE, RPE and NEES of a trajectory");
  common(ev);
  ev->add_option("--est", est, "estimated trajectory")->required();
  ev->add_option("--ref", ref, "reference trajectory")->required();
  ev->add_option("--cov", cov, "per-frame pose covariance CSV (enables NEES)");
  ev->add_option("--out", out, "directory for metric CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const Config cfg = make_config(config_path, overrides);
    if (*sim) return cmd_simulate(cfg, out);
    if (*run) return cmd_run(cfg, dataset, out);
    return cmd_evaluate(cfg, est, ref, cov, out);
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const PropagationError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
