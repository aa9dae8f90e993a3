#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/handeye.hpp"
#include "mlcalib/io.hpp"
#include "mlcalib/refinement.hpp"
#include "mlcalib/simulation.hpp"

namespace mlcalib {

/// A module error tagged with the pipeline phase that raised it.
class PhaseError : public CalibError {
 public:
  PhaseError(std::string phase, const CalibError& cause)
      : CalibError(cause.code(), phase + " phase: " + strip_code(cause.what())), phase_(std::move(phase)) {}

  const std::string& phase() const noexcept { return phase_; }

 private:
  static std::string strip_code(const std::string& what) {
    const auto pos = what.find(": ");
    return pos == std::string::npos ? what : what.substr(pos + 2);
  }

  std::string phase_;
};

/// Process exit status for a failure: 2 for bad input or configuration,
/// 3 for motion that does not determine the extrinsic, 4 for refinement.
inline int exit_code_for(const CalibError& e) {
  switch (e.code()) {
    case ErrorCode::kParseError:
    case ErrorCode::kConfigError:
    case ErrorCode::kFrameMismatch:
      return 2;
    default:
      break;
  }
  if (const auto* pe = dynamic_cast<const PhaseError*>(&e); pe && pe->phase() == "refine") return 4;
  switch (e.code()) {
    case ErrorCode::kDegenerateMotion:
    case ErrorCode::kTooFewInliers:
    case ErrorCode::kGimbalDegenerate:
      return 3;
    case ErrorCode::kEmptyScan:
    case ErrorCode::kDegenerateGeometry:
      return 2;
    default:
      return 4;
  }
}

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string poses_a;
  std::string poses_b;
  std::optional<std::string> frames;  // cloud manifest; refinement is skipped without it
  std::optional<std::string> truth;   // ground-truth JSON; errors are reported when present
  std::string output = "report.json";
  HandEyeOptions handeye;
  RefineOptions refine;
  double sigma2 = 0.0;  // motion noise the inputs were simulated with (recorded only)
  std::uint64_t seed = 0;
  bool record_timing = false;  // off by default so reports are byte-reproducible

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw CalibError(ErrorCode::kConfigError, what);
    };
    require(!poses_a.empty() && !poses_b.empty(), "both pose files must be given");
    require(handeye.eps_r > 0.0, "eps_r must be > 0");
    require(handeye.eps_t > 0.0, "eps_t must be > 0");
    require(refine.overlap_radius > 0.0, "overlap radius must be > 0");
    require(refine.omega_gate > 0.0 && refine.omega_gate <= 1.0, "omega gate must lie in (0, 1]");
    require(refine.relative_gate > 0.0 && refine.relative_gate <= 1.0, "relative gate must lie in (0, 1]");
    require(refine.candidates >= 1, "candidate count must be >= 1");
    require(refine.icp.max_iterations >= 1, "ICP iteration cap must be >= 1");
    require(refine.icp.tolerance > 0.0, "ICP tolerance must be > 0");
    require(refine.icp.normal_neighbors >= 3, "normal estimation needs >= 3 neighbours");
    require(refine.icp.trim_factor > 0.0, "trim factor must be > 0");
    require(refine.icp.max_curvature > 0.0, "curvature limit must be > 0");
    require(refine.ransac.max_iterations >= 1, "RANSAC iteration cap must be >= 1");
    require(refine.ransac.inlier_distance > 0.0, "RANSAC inlier distance must be > 0");
    require(refine.ransac.confidence > 0.0 && refine.ransac.confidence < 1.0, "RANSAC confidence must lie in (0, 1)");
    require(sigma2 >= 0.0, "sigma2 must be >= 0");
  }
};

inline std::string to_string(OutlierPolicy p) { return p == OutlierPolicy::kBoth ? "both" : "either"; }
inline std::string to_string(GateMode m) { return m == GateMode::kAbsolute ? "absolute" : "relative"; }

inline OutlierPolicy parse_outlier_policy(const std::string& s) {
  if (s == "both") return OutlierPolicy::kBoth;
  if (s == "either") return OutlierPolicy::kEither;
  throw CalibError(ErrorCode::kConfigError, "outlier policy must be 'both' or 'either'");
}

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "absolute") return GateMode::kAbsolute;
  if (s == "relative") return GateMode::kRelativeToMax;
  throw CalibError(ErrorCode::kConfigError, "gate mode must be 'absolute' or 'relative'");
}

namespace detail {

inline Json optional_string(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

inline std::optional<std::string> read_optional_string(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline Json config_to_json(const RunConfig& c) {
  const IcpOptions& icp = c.refine.icp;
  const RansacOptions& rs = c.refine.ransac;
  return {{"schema_version", kSchemaVersion},
          {"poses_a", c.poses_a},
          {"poses_b", c.poses_b},
          {"frames", detail::optional_string(c.frames)},
          {"truth", detail::optional_string(c.truth)},
          {"output", c.output},
          {"eps_r", c.handeye.eps_r},
          {"eps_t", c.handeye.eps_t},
          {"outlier_policy", to_string(c.handeye.policy)},
          {"weighted_rows", c.handeye.weighted_rows},
          {"overlap_radius", c.refine.overlap_radius},
          {"omega_gate", c.refine.omega_gate},
          {"gate_mode", to_string(c.refine.gate_mode)},
          {"relative_gate", c.refine.relative_gate},
          {"candidates", c.refine.candidates},
          {"icp",
           {{"max_iterations", icp.max_iterations},
            {"tolerance", icp.tolerance},
            {"normal_neighbors", icp.normal_neighbors},
            {"trim_factor", icp.trim_factor},
            {"min_correspondences", icp.min_correspondences},
            {"max_curvature", icp.max_curvature},
            {"degeneracy_ratio", icp.degeneracy_ratio}}},
          {"ransac",
           {{"max_iterations", rs.max_iterations},
            {"inlier_distance", rs.inlier_distance},
            {"confidence", rs.confidence}}},
          {"sigma2", c.sigma2},
          {"seed", c.seed},
          {"record_timing", c.record_timing}};
}

/// Missing keys keep their defaults; unknown schema versions are rejected.
inline RunConfig config_from_json(const Json& j) {
  try {
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion)
      throw CalibError(ErrorCode::kConfigError, "unsupported schema_version");
    RunConfig c;
    c.poses_a = j.value("poses_a", c.poses_a);
    c.poses_b = j.value("poses_b", c.poses_b);
    c.frames = detail::read_optional_string(j, "frames");
    c.truth = detail::read_optional_string(j, "truth");
    c.output = j.value("output", c.output);
    c.handeye.eps_r = j.value("eps_r", c.handeye.eps_r);
    c.handeye.eps_t = j.value("eps_t", c.handeye.eps_t);
    c.handeye.policy = parse_outlier_policy(j.value("outlier_policy", to_string(c.handeye.policy)));
    c.handeye.weighted_rows = j.value("weighted_rows", c.handeye.weighted_rows);
    c.refine.overlap_radius = j.value("overlap_radius", c.refine.overlap_radius);
    c.refine.omega_gate = j.value("omega_gate", c.refine.omega_gate);
    c.refine.gate_mode = parse_gate_mode(j.value("gate_mode", to_string(c.refine.gate_mode)));
    c.refine.relative_gate = j.value("relative_gate", c.refine.relative_gate);
    c.refine.candidates = j.value("candidates", c.refine.candidates);
    if (j.contains("icp")) {
      const Json& i = j.at("icp");
      IcpOptions& o = c.refine.icp;
      o.max_iterations = i.value("max_iterations", o.max_iterations);
      o.tolerance = i.value("tolerance", o.tolerance);
      o.normal_neighbors = i.value("normal_neighbors", o.normal_neighbors);
      o.trim_factor = i.value("trim_factor", o.trim_factor);
      o.min_correspondences = i.value("min_correspondences", o.min_correspondences);
      o.max_curvature = i.value("max_curvature", o.max_curvature);
      o.degeneracy_ratio = i.value("degeneracy_ratio", o.degeneracy_ratio);
    }
    if (j.contains("ransac")) {
      const Json& r = j.at("ransac");
      RansacOptions& o = c.refine.ransac;
      o.max_iterations = r.value("max_iterations", o.max_iterations);
      o.inlier_distance = r.value("inlier_distance", o.inlier_distance);
      o.confidence = r.value("confidence", o.confidence);
    }
    c.sigma2 = j.value("sigma2", c.sigma2);
    c.seed = j.value("seed", c.seed);
    c.refine.seed = c.seed;
    c.record_timing = j.value("record_timing", c.record_timing);
    return c;
  } catch (const Json::exception& e) {
    throw CalibError(ErrorCode::kConfigError, std::string("bad config: ") + e.what());
  }
}

/// Reads a config file; relative input paths are taken relative to it.
inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c = config_from_json(load_json(path));
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.poses_a);
  resolve(c.poses_b);
  resolve(c.output);
  if (c.frames) resolve(*c.frames);
  if (c.truth) resolve(*c.truth);
  return c;
}

// ---------------------------------------------------------------------------
// Error metrics

struct PhaseErrors {
  double rotation = 0.0;     // rad, angle of R_gt R^-1
  double translation = 0.0;  // m
  bool count_tz = true;      // false: only the x and y components enter the translation error
};

inline PhaseErrors compute_errors(const Pose& estimate, const Pose& truth, bool count_tz) {
  PhaseErrors e;
  e.count_tz = count_tz;
  e.rotation = rotation_angle_distance(truth.rotation, estimate.rotation);
  const Vec3 d = truth.translation - estimate.translation;
  e.translation = count_tz ? d.norm() : d.head<2>().norm();
  return e;
}

inline PhaseErrors compute_errors(const Extrinsics& estimate, const Pose& truth, bool count_tz) {
  return compute_errors(estimate.transform, truth, count_tz);
}

// ---------------------------------------------------------------------------
// Report

struct FilterSummary {
  std::size_t input = 0;
  std::size_t inliers = 0;
  std::size_t rejected_rotation_only = 0;
  std::size_t rejected_translation_only = 0;
  std::size_t rejected_both = 0;
};

struct RefinementSection {
  std::string status = "skipped";  // "ok" or "skipped"
  std::optional<Extrinsics> extrinsics;
  std::vector<FrameResult> frames;
  std::size_t candidate_count = 0;
  TzEstimate tz;
};

struct CalibrationReport {
  RunConfig config;
  Extrinsics init;
  FilterSummary filter;
  std::optional<Extrinsics> kabsch;
  std::string kabsch_status = "ok";
  RefinementSection refinement;
  std::optional<Pose> truth;
  std::map<std::string, PhaseErrors> errors;  // keyed by "init", "kabsch", "refined"
  std::map<std::string, double> timing;       // seconds per phase, only when requested
};

inline Json errors_to_json(const PhaseErrors& e) {
  return {{"rotation", e.rotation}, {"translation", e.translation}, {"count_tz", e.count_tz}};
}

inline PhaseErrors errors_from_json(const Json& j) {
  return {j.at("rotation").get<double>(), j.at("translation").get<double>(), j.at("count_tz").get<bool>()};
}

inline Json registration_to_json(const RegistrationResult& r) {
  return {{"transform", pose_to_json(r.transform)},
          {"error", r.error},
          {"initial_error", r.initial_error},
          {"iterations", r.iterations},
          {"omega", r.omega},
          {"converged", r.converged},
          {"degenerate", r.degenerate},
          {"correspondences", r.correspondences}};
}

inline RegistrationResult registration_from_json(const Json& j) {
  RegistrationResult r;
  r.transform = pose_from_json(j.at("transform"));
  r.error = j.at("error").get<double>();
  r.initial_error = j.at("initial_error").get<double>();
  r.iterations = j.at("iterations").get<int>();
  r.omega = j.at("omega").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.correspondences = j.at("correspondences").get<std::size_t>();
  return r;
}

inline Json frame_to_json(const FrameResult& f) {
  return {{"k", f.k},
          {"omega", f.omega},
          {"gated_in", f.gated_in},
          {"selected", f.selected},
          {"status", f.status},
          {"registration", f.registration ? registration_to_json(*f.registration) : Json(nullptr)}};
}

inline FrameResult frame_from_json(const Json& j) {
  FrameResult f;
  f.k = j.at("k").get<std::int64_t>();
  f.omega = j.at("omega").get<double>();
  f.gated_in = j.at("gated_in").get<bool>();
  f.selected = j.at("selected").get<bool>();
  f.status = j.at("status").get<std::string>();
  if (!j.at("registration").is_null()) f.registration = registration_from_json(j.at("registration"));
  return f;
}

inline Json report_to_json(const CalibrationReport& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = config_to_json(r.config);
  j["init"] = extrinsics_to_json(r.init);
  j["filter"] = {{"input", r.filter.input},
                 {"inliers", r.filter.inliers},
                 {"rejected_rotation_only", r.filter.rejected_rotation_only},
                 {"rejected_translation_only", r.filter.rejected_translation_only},
                 {"rejected_both", r.filter.rejected_both}};
  j["kabsch"] = r.kabsch ? extrinsics_to_json(*r.kabsch) : Json(nullptr);
  j["kabsch_status"] = r.kabsch_status;

  Json ref;
  ref["status"] = r.refinement.status;
  ref["extrinsics"] = r.refinement.extrinsics ? extrinsics_to_json(*r.refinement.extrinsics) : Json(nullptr);
  ref["candidate_count"] = r.refinement.candidate_count;
  ref["tz"] = {{"tz", r.refinement.tz.tz},
               {"frames_used", r.refinement.tz.frames_used},
               {"per_frame", r.refinement.tz.per_frame}};
  ref["frames"] = Json::array();
  for (const FrameResult& f : r.refinement.frames) ref["frames"].push_back(frame_to_json(f));
  j["refinement"] = ref;

  j["truth"] = r.truth ? pose_to_json(*r.truth) : Json(nullptr);
  j["errors"] = Json::object();
  for (const auto& [phase, e] : r.errors) j["errors"][phase] = errors_to_json(e);
  if (!r.timing.empty()) j["timing"] = r.timing;
  return j;
}

inline CalibrationReport report_from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw CalibError(ErrorCode::kParseError, "unsupported report schema_version");
    CalibrationReport r;
    r.config = config_from_json(j.at("config"));
    r.init = extrinsics_from_json(j.at("init"));
    const Json& f = j.at("filter");
    r.filter = {f.at("input").get<std::size_t>(), f.at("inliers").get<std::size_t>(),
                f.at("rejected_rotation_only").get<std::size_t>(), f.at("rejected_translation_only").get<std::size_t>(),
                f.at("rejected_both").get<std::size_t>()};
    if (!j.at("kabsch").is_null()) r.kabsch = extrinsics_from_json(j.at("kabsch"));
    r.kabsch_status = j.at("kabsch_status").get<std::string>();

    const Json& ref = j.at("refinement");
    r.refinement.status = ref.at("status").get<std::string>();
    if (!ref.at("extrinsics").is_null()) r.refinement.extrinsics = extrinsics_from_json(ref.at("extrinsics"));
    r.refinement.candidate_count = ref.at("candidate_count").get<std::size_t>();
    r.refinement.tz.tz = ref.at("tz").at("tz").get<double>();
    r.refinement.tz.frames_used = ref.at("tz").at("frames_used").get<std::size_t>();
    r.refinement.tz.per_frame = ref.at("tz").at("per_frame").get<std::vector<double>>();
    for (const Json& fr : ref.at("frames")) r.refinement.frames.push_back(frame_from_json(fr));

    if (!j.at("truth").is_null()) r.truth = pose_from_json(j.at("truth"));
    for (const auto& [phase, e] : j.at("errors").items()) r.errors[phase] = errors_from_json(e);
    if (j.contains("timing")) r.timing = j.at("timing").get<std::map<std::string, double>>();
    return r;
  } catch (const Json::exception& e) {
    throw CalibError(ErrorCode::kParseError, std::string("bad report: ") + e.what());
  }
}

/// Per-frame refinement table as CSV: overlap, registration error and, when
/// the truth is known, the calibration error of each frame's registration.
inline std::string frames_csv(const std::vector<FrameResult>& frames, const std::optional<Pose>& truth) {
  std::ostringstream out;
  out << std::setprecision(kFullPrecision);
  out << "k,omega,gated_in,selected,status,iterations,registration_error,e_r,e_t\n";
  for (const FrameResult& f : frames) {
    out << f.k << ',' << f.omega << ',' << int(f.gated_in) << ',' << int(f.selected) << ',' << f.status << ',';
    if (f.registration) {
      out << f.registration->iterations << ',' << f.registration->error << ',';
      if (truth) {
        const PhaseErrors e = compute_errors(f.registration->transform, *truth, true);
        out << e.rotation << ',' << e.translation;
      } else {
        out << ',';
      }
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Orchestration

namespace detail {

template <typename F>
auto run_phase(const char* phase, F&& body) {
  try {
    return body();
  } catch (const PhaseError&) {
    throw;
  } catch (const CalibError& e) {
    throw PhaseError(phase, e);
  }
}

class PhaseClock {
 public:
  PhaseClock(bool enabled, std::map<std::string, double>& sink) : enabled_(enabled), sink_(sink) {}

  void mark(const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    if (enabled_) sink_[phase] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  bool enabled_;
  std::map<std::string, double>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// Motion-based initialization, the Kabsch baseline on the same inliers, and
/// appearance-based refinement when a cloud manifest is configured.
inline CalibrationReport run_calibration(const RunConfig& config) {
  detail::run_phase("config", [&] {
    config.validate();
    return 0;
  });

  CalibrationReport report;
  report.config = config;
  report.config.refine.seed = config.seed;
  detail::PhaseClock clock(config.record_timing, report.timing);

  const std::vector<MotionPair> pairs = detail::run_phase("load", [&] {
    return motions_from_trajectories(load_poses(config.poses_a), load_poses(config.poses_b));
  });
  if (config.truth)
    report.truth = detail::run_phase("load", [&] { return truth_from_json(load_json(*config.truth)).extrinsic; });
  clock.mark("load");

  const FilterResult filtered = detail::run_phase("init", [&] {
    return filter_motion_pairs(pairs, config.handeye.eps_r, config.handeye.eps_t, config.handeye.policy);
  });
  report.filter = {pairs.size(), filtered.inlier_count, filtered.rejected_rotation_only,
                   filtered.rejected_translation_only, filtered.rejected_both};
  report.init = detail::run_phase("init", [&] { return initialize_extrinsic(pairs, config.handeye); });
  clock.mark("init");

  try {
    report.kabsch = kabsch_baseline(filtered.inliers());
  } catch (const CalibError& e) {
    report.kabsch_status = e.what();
  }
  clock.mark("kabsch");

  if (config.frames) {
    const std::vector<FramePair> frames = detail::run_phase("load", [&] { return load_frames(*config.frames); });
    const RefinementOutcome outcome =
        detail::run_phase("refine", [&] { return refine_extrinsic(frames, report.init, report.config.refine); });
    report.refinement.status = "ok";
    report.refinement.extrinsics = outcome.extrinsics;
    report.refinement.frames = outcome.frames;
    report.refinement.candidate_count = outcome.candidate_count;
    report.refinement.tz = outcome.tz;
    clock.mark("refine");
  }

  if (report.truth) {
    report.errors["init"] = compute_errors(report.init, *report.truth, false);
    if (report.kabsch) report.errors["kabsch"] = compute_errors(*report.kabsch, *report.truth, false);
    if (report.refinement.extrinsics)
      report.errors["refined"] = compute_errors(*report.refinement.extrinsics, *report.truth, true);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  Json json;
  std::string text;
};

/// Errors of every phase of `report` against `truth`, as JSON and as an
/// aligned table with one column per estimator. Missing phases read "n/a".
inline Evaluation eval_report(const CalibrationReport& report, const Pose& truth) {
  struct Column {
    const char* name;
    std::optional<Extrinsics> estimate;
    bool count_tz;
  };
  const Column columns[] = {{"Kabsch", report.kabsch, false},
                            {"Proposed", report.init, false},
                            {"Refined", report.refinement.extrinsics, true}};

  Evaluation out;
  out.json["schema_version"] = kSchemaVersion;
  out.json["truth"] = pose_to_json(truth);
  out.json["candidate_count"] = report.refinement.candidate_count;
  std::vector<std::optional<PhaseErrors>> errs;
  for (const Column& c : columns) {
    std::optional<PhaseErrors> e;
    if (c.estimate) e = compute_errors(*c.estimate, truth, c.count_tz);
    errs.push_back(e);
    out.json["phases"][c.name] = e ? errors_to_json(*e) : Json(nullptr);
  }

  auto cell = [](const std::optional<PhaseErrors>& e, bool rotation) -> std::string {
    if (!e) return "n/a";
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << (rotation ? e->rotation : e->translation);
    return s.str();
  };
  std::ostringstream t;
  constexpr int kLabel = 10, kCell = 12;
  t << std::left << std::setw(kLabel) << "metric";
  for (const Column& c : columns) t << std::right << std::setw(kCell) << c.name;
  t << '\n';
  t << std::left << std::setw(kLabel) << "e_r [rad]";
  for (const auto& e : errs) t << std::right << std::setw(kCell) << cell(e, true);
  t << '\n';
  t << std::left << std::setw(kLabel) << "e_t [m]";
  for (const auto& e : errs) t << std::right << std::setw(kCell) << cell(e, false);
  t << '\n';
  t << "candidates used by refinement: ";
  if (report.refinement.candidate_count > 0)
    t << report.refinement.candidate_count;
  else
    t << "n/a";
  t << '\n';
  out.text = t.str();
  return out;
}

// ---------------------------------------------------------------------------
// Dataset simulation

struct SimulationConfig {
  TrajectoryKind kind = TrajectoryKind::kLoop;
  int steps = 200;
  double scale = 10.0;
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
  std::string rig = "sim";    // "sim", "front" or "tail"
  std::size_t cloud_stride = 10;  // 0 disables cloud generation
  ScannerModel scanner;
};

inline RigConfig rig_preset(const std::string& name) {
  if (name == "sim") return simulated_car_rig();
  if (name == "front") return top_front_rig();
  if (name == "tail") return top_tail_rig();
  throw CalibError(ErrorCode::kConfigError, "unknown rig preset '" + name + "' (sim, front, tail)");
}

/// Vehicle trajectory recentred on the street of the urban-block scene.
inline Trajectory simulated_vehicle(const SimulationConfig& cfg) {
  Trajectory veh = generate_trajectory(cfg.kind, cfg.steps, cfg.scale, cfg.seed);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Pose& p : veh.poses) {
    lo = lo.cwiseMin(p.translation);
    hi = hi.cwiseMax(p.translation);
  }
  Vec3 shift = -0.5 * (lo + hi);
  shift.z() = 0.0;
  for (Pose& p : veh.poses) p.translation += shift;
  return veh;
}

/// Sensor trajectories whose incremental motions carry independent tangent
/// noise of variance sigma2, integrated from the true start poses.
inline std::pair<Trajectory, Trajectory> simulated_pose_streams(const Trajectory& vehicle, const RigConfig& rig,
                                                                double sigma2, std::uint64_t seed) {
  const Pose mount{Rotation::identity(), Vec3(0.0, 0.0, rig.reference_height)};
  Trajectory a = attach_sensor(vehicle, mount, rig.reference);
  const std::vector<MotionPair> pairs = add_motion_noise(derive_target_motions(a, rig.extrinsic), sigma2, seed);
  std::vector<Pose> ma, mb;
  for (const MotionPair& p : pairs) {
    ma.push_back(p.motion_a);
    mb.push_back(p.motion_b);
  }
  return {integrate_motions(a.poses.front(), ma, a.stamps, rig.reference),
          integrate_motions(a.poses.front() * rig.extrinsic, mb, a.stamps, rig.target)};
}

/// Writes poses_a.csv, poses_b.csv, truth.json, config.json and, when clouds
/// are enabled, clouds/*.ply with frames.csv into `dir`.
inline RunConfig simulate_dataset(const SimulationConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.steps < 2) throw CalibError(ErrorCode::kConfigError, "at least 2 motion steps are required");
  if (cfg.sigma2 < 0.0) throw CalibError(ErrorCode::kConfigError, "sigma2 must be >= 0");
  cfg.scanner.validate();
  const RigConfig rig = rig_preset(cfg.rig);
  const Trajectory vehicle = simulated_vehicle(cfg);
  const auto [a, b] = simulated_pose_streams(vehicle, rig, cfg.sigma2, cfg.seed);

  std::filesystem::create_directories(dir);
  save_poses(dir / "poses_a.csv", a);
  save_poses(dir / "poses_b.csv", b);
  save_json(dir / "truth.json", truth_to_json({rig.reference, rig.target, rig.extrinsic}));

  RunConfig run;
  run.poses_a = "poses_a.csv";
  run.poses_b = "poses_b.csv";
  run.truth = "truth.json";
  run.output = "report.json";
  run.sigma2 = cfg.sigma2;
  run.seed = cfg.seed;

  if (cfg.cloud_stride > 0) {
    const std::vector<FramePair> frames =
        scan_rig_frames(urban_block_scene(), vehicle, rig, cfg.scanner, cfg.cloud_stride, cfg.seed);
    std::vector<ManifestEntry> manifest;
    for (const FramePair& f : frames) {
      std::ostringstream na, nb;
      na << "clouds/a_" << std::setw(5) << std::setfill('0') << f.k << ".ply";
      nb << "clouds/b_" << std::setw(5) << std::setfill('0') << f.k << ".ply";
      save_cloud(dir / na.str(), f.a);
      save_cloud(dir / nb.str(), f.b);
      manifest.push_back({f.k, na.str(), nb.str()});
    }
    save_manifest(dir / "frames.csv", manifest);
    run.frames = "frames.csv";
  }
  save_json(dir / "config.json", config_to_json(run));
  return run;
}

}  // namespace mlcalib
