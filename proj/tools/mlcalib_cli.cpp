#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlcalib/mlcalib.hpp"

namespace fs = std::filesystem;
using namespace mlcalib;

namespace {

fs::path sibling(const fs::path& file, const std::string& suffix) {
  fs::path out = file;
  out.replace_extension();
  out += suffix;
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CalibError(ErrorCode::kConfigError, "cannot write " + path.string());
  out << text;
}

void print_pose(const char* label, const Pose& p) {
  const Vec3 rpy = rotation_to_rpy(p.rotation);
  std::cout << label << " rpy [" << rpy.x() << ", " << rpy.y() << ", " << rpy.z() << "] rad, t ["
            << p.translation.x() << ", " << p.translation.y() << ", " << p.translation.z() << "] m\n";
}

Json pair_residuals(const std::vector<MotionPair>& pairs) {
  Json rows = Json::array();
  for (const MotionPair& p : pairs)
    rows.push_back({{"k", p.k},
                    {"rotation_residual", p.rot_residual},
                    {"translation_residual", p.trans_residual},
                    {"inlier", p.inlier}});
  return rows;
}

struct SimulateArgs {
  std::string traj;
  int k = 200;
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string rig = "sim";
  double scale = 10.0;
  std::size_t cloud_stride = 10;
  double range_noise = 0.01;
};

int run_simulate(const SimulateArgs& a) {
  const auto kind = parse_trajectory_kind(a.traj);
  if (!kind) throw CalibError(ErrorCode::kConfigError, "unknown trajectory '" + a.traj + "'");
  SimulationConfig cfg;
  cfg.kind = *kind;
  cfg.steps = a.k;
  cfg.sigma2 = a.sigma2;
  cfg.seed = a.seed;
  cfg.rig = a.rig;
  cfg.scale = a.scale;
  cfg.cloud_stride = a.cloud_stride;
  cfg.scanner.range_noise_std = a.range_noise;
  const RunConfig run = simulate_dataset(cfg, a.out);
  std::cout << "wrote " << a.k + 1 << " poses per sensor to " << a.out;
  if (run.frames) std::cout << " with clouds every " << a.cloud_stride << " poses";
  std::cout << "\nconfig: " << (fs::path(a.out) / "config.json").string() << '\n';
  return 0;
}

struct InitArgs {
  std::string poses_a, poses_b, out, diagnostics, policy = "both";
  double eps_r = 0.01, eps_t = 0.01;
};

int run_init(const InitArgs& a) {
  HandEyeOptions opts;
  opts.eps_r = a.eps_r;
  opts.eps_t = a.eps_t;
  opts.policy = parse_outlier_policy(a.policy);
  if (!(opts.eps_r > 0.0) || !(opts.eps_t > 0.0))
    throw CalibError(ErrorCode::kConfigError, "screw thresholds must be > 0");

  const auto pairs = detail::run_phase("load", [&] {
    return motions_from_trajectories(load_poses(a.poses_a), load_poses(a.poses_b));
  });
  const FilterResult filtered =
      detail::run_phase("init", [&] { return filter_motion_pairs(pairs, opts.eps_r, opts.eps_t, opts.policy); });
  const Extrinsics init = detail::run_phase("init", [&] { return initialize_extrinsic(pairs, opts); });

  save_json(a.out, extrinsics_to_json(init));
  Json diag = diagnostics_to_json(init.diagnostics);
  diag["schema_version"] = kSchemaVersion;
  diag["rejected_rotation_only"] = filtered.rejected_rotation_only;
  diag["rejected_translation_only"] = filtered.rejected_translation_only;
  diag["rejected_both"] = filtered.rejected_both;
  diag["pairs"] = pair_residuals(filtered.pairs);
  const fs::path diag_path = a.diagnostics.empty() ? sibling(a.out, ".diagnostics.json") : fs::path(a.diagnostics);
  save_json(diag_path, diag);

  print_pose("init", init.transform);
  std::cout << "inliers " << filtered.inlier_count << "/" << pairs.size() << ", t_z not observable\n";
  return 0;
}

struct RefineArgs {
  std::string init, frames, out, frames_csv, truth, gate_mode = "absolute";
  double r = 10.0, omega = 0.8;
  std::size_t candidates = 10;
  std::uint64_t seed = 0;
};

int run_refine(const RefineArgs& a) {
  RunConfig check;
  check.poses_a = check.poses_b = "-";
  check.refine.overlap_radius = a.r;
  check.refine.omega_gate = a.omega;
  check.refine.candidates = a.candidates;
  check.refine.gate_mode = parse_gate_mode(a.gate_mode);
  check.refine.seed = a.seed;
  check.validate();

  const Extrinsics init = detail::run_phase("load", [&] { return extrinsics_from_json(load_json(a.init)); });
  const auto frames = detail::run_phase("load", [&] { return load_frames(a.frames); });
  std::optional<Pose> truth;
  if (!a.truth.empty())
    truth = detail::run_phase("load", [&] { return truth_from_json(load_json(a.truth)).extrinsic; });

  const RefinementOutcome outcome =
      detail::run_phase("refine", [&] { return refine_extrinsic(frames, init, check.refine); });

  Json j = extrinsics_to_json(outcome.extrinsics);
  j["candidate_count"] = outcome.candidate_count;
  j["tz_estimate"] = outcome.tz.tz;
  save_json(a.out, j);
  write_text(a.frames_csv.empty() ? sibling(a.out, ".frames.csv") : fs::path(a.frames_csv),
             frames_csv(outcome.frames, truth));

  print_pose("refined", outcome.extrinsics.transform);
  std::cout << "averaged " << outcome.candidate_count << " of " << frames.size() << " frames\n";
  if (truth) {
    const PhaseErrors e = compute_errors(outcome.extrinsics, *truth, true);
    std::cout << "e_r " << e.rotation << " rad, e_t " << e.translation << " m\n";
  }
  return 0;
}

int run_calibrate(const std::string& config_path) {
  const RunConfig config = detail::run_phase("config", [&] { return load_config(config_path); });
  const CalibrationReport report = run_calibration(config);
  save_json(config.output, report_to_json(report));
  if (report.refinement.status == "ok")
    write_text(sibling(config.output, ".frames.csv"), frames_csv(report.refinement.frames, report.truth));

  print_pose("init", report.init.transform);
  if (report.refinement.extrinsics)
    print_pose("refined", report.refinement.extrinsics->transform);
  else
    std::cout << "refinement skipped (no cloud manifest)\n";
  if (report.truth) std::cout << eval_report(report, *report.truth).text;
  std::cout << "report: " << config.output << '\n';
  return 0;
}

int run_eval(const std::string& report_path, const std::string& truth_path, const std::string& json_out) {
  const CalibrationReport report =
      detail::run_phase("load", [&] { return report_from_json(load_json(report_path)); });
  const Pose truth = detail::run_phase("load", [&] { return truth_from_json(load_json(truth_path)).extrinsic; });
  const Evaluation ev = eval_report(report, truth);
  if (!json_out.empty()) save_json(json_out, ev.json);
  std::cout << ev.text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extrinsic calibration of multiple range scanners from motion and appearance"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "generate a ground-truthed dataset");
  simulate->add_option("--traj", sim.traj, "trajectory shape")
      ->required()
      ->check(CLI::IsMember({"loop", "eight", "sweep"}));
  simulate->add_option("--k", sim.k, "number of motion steps")->check(CLI::Range(2, 1000000));
  simulate->add_option("--sigma2", sim.sigma2, "tangent-space motion noise variance")->check(CLI::NonNegativeNumber);
  simulate->add_option("--seed", sim.seed, "random seed")->required();
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--rig", sim.rig, "rig preset")->check(CLI::IsMember({"sim", "front", "tail"}));
  simulate->add_option("--scale", sim.scale, "trajectory size scale")->check(CLI::PositiveNumber);
  simulate->add_option("--cloud-stride", sim.cloud_stride, "scan every n-th pose, 0 disables clouds");
  simulate->add_option("--range-noise", sim.range_noise, "range noise std, m")->check(CLI::NonNegativeNumber);

  InitArgs ini;
  auto* init = app.add_subcommand("init", "motion-based initialization");
  init->add_option("--poses-a", ini.poses_a, "reference sensor pose CSV")->required();
  init->add_option("--poses-b", ini.poses_b, "target sensor pose CSV")->required();
  init->add_option("--eps-r", ini.eps_r, "rotation screw threshold, rad");
  init->add_option("--eps-t", ini.eps_t, "translation screw threshold, m^2");
  init->add_option("--policy", ini.policy, "reject when both or either residual exceeds")
      ->check(CLI::IsMember({"both", "either"}));
  init->add_option("--out", ini.out, "extrinsics JSON")->required();
  init->add_option("--diagnostics", ini.diagnostics, "diagnostics JSON (default: next to --out)");

  RefineArgs ref;
  auto* refine = app.add_subcommand("refine", "appearance-based refinement");
  refine->add_option("--init", ref.init, "initial extrinsics JSON")->required();
  refine->add_option("--frames", ref.frames, "cloud manifest CSV")->required();
  refine->add_option("--r", ref.r, "overlap radius, m");
  refine->add_option("--omega", ref.omega, "overlap gate");
  refine->add_option("--gate", ref.gate_mode, "absolute or relative overlap gate")
      ->check(CLI::IsMember({"absolute", "relative"}));
  refine->add_option("--candidates", ref.candidates, "registrations averaged");
  refine->add_option("--seed", ref.seed, "RANSAC seed")->required();
  refine->add_option("--truth", ref.truth, "ground-truth JSON for per-frame errors");
  refine->add_option("--out", ref.out, "refined extrinsics JSON")->required();
  refine->add_option("--frames-out", ref.frames_csv, "per-frame CSV (default: next to --out)");

  std::string config_path;
  auto* calibrate = app.add_subcommand("calibrate", "run the full pipeline from a config file");
  calibrate->add_option("--config", config_path, "run configuration JSON")->required();

  std::string report_path, truth_path, eval_json;
  auto* eval = app.add_subcommand("eval", "compare a report against ground truth");
  eval->add_option("--report", report_path, "calibration report JSON")->required();
  eval->add_option("--truth", truth_path, "ground-truth JSON")->required();
  eval->add_option("--json", eval_json, "also write the comparison as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*init) return run_init(ini);
    if (*refine) return run_refine(ref);
    if (*calibrate) return run_calibrate(config_path);
    if (*eval) return run_eval(report_path, truth_path, eval_json);
  } catch (const CalibError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
