#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mlcalib/error.hpp"
#include "mlcalib/geometry.hpp"
#include "mlcalib/handeye.hpp"
#include "mlcalib/point_cloud.hpp"
#include "mlcalib/simulation.hpp"

namespace mlcalib {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kFullPrecision = std::numeric_limits<double>::max_digits10;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline CalibError parse_error(const std::string& source, std::size_t line, const std::string& what) {
  return CalibError(ErrorCode::kParseError, source + ":" + std::to_string(line) + ": " + what);
}

inline double parse_double(const std::string& tok, const std::string& source, std::size_t line) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw parse_error(source, line, "invalid number '" + tok + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& tok, const std::string& source, std::size_t line) {
  std::int64_t v = 0;
  const char* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) throw parse_error(source, line, "invalid integer '" + tok + "'");
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CalibError(ErrorCode::kParseError, "cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CalibError(ErrorCode::kConfigError, "cannot write " + path.string());
  out << std::setprecision(kFullPrecision);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pose CSV: k,tx,ty,tz,qw,qx,qy,qz with absolute world-frame poses.

inline constexpr std::string_view kPoseHeader = "k,tx,ty,tz,qw,qx,qy,qz";

inline void write_poses(std::ostream& out, const Trajectory& traj) {
  if (traj.stamps.size() != traj.poses.size())
    throw CalibError(ErrorCode::kConfigError, "trajectory stamps and poses differ in length");
  out << std::setprecision(kFullPrecision) << kPoseHeader << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.poses[i];
    out << traj.stamps[i] << ',' << p.translation.x() << ',' << p.translation.y() << ',' << p.translation.z() << ','
        << p.rotation.w() << ',' << p.rotation.x() << ',' << p.rotation.y() << ',' << p.rotation.z() << '\n';
  }
}

inline Trajectory read_poses(std::istream& in, const std::string& source, std::string sensor) {
  Trajectory traj;
  traj.sensor = std::move(sensor);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (!header) {
      if (text != kPoseHeader)
        throw detail::parse_error(source, line_no, "expected header '" + std::string(kPoseHeader) + "'");
      header = true;
      continue;
    }
    const auto f = detail::split(text, ',');
    if (f.size() != 8)
      throw detail::parse_error(source, line_no, "expected 8 fields, found " + std::to_string(f.size()));
    const std::int64_t k = detail::parse_int(f[0], source, line_no);
    double v[7];
    for (int i = 0; i < 7; ++i) v[i] = detail::parse_double(f[i + 1], source, line_no);
    const double qn = std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]);
    if (std::abs(qn - 1.0) > 1e-3) throw detail::parse_error(source, line_no, "quaternion is not unit length");
    traj.stamps.push_back(k);
    traj.poses.push_back(Pose{Rotation(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2])});
  }
  if (!header) throw detail::parse_error(source, line_no + 1, "missing pose header");
  return traj;
}

inline void save_poses(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = detail::open_out(path);
  write_poses(out, traj);
}

/// The sensor name defaults to the file stem.
inline Trajectory load_poses(const std::filesystem::path& path, std::optional<std::string> sensor = std::nullopt) {
  auto in = detail::open_in(path);
  return read_poses(in, path.string(), sensor.value_or(path.stem().string()));
}

// ---------------------------------------------------------------------------
// ASCII PLY clouds with double x/y/z and an optional uchar ground flag.

inline void write_cloud(std::ostream& out, const PointCloud& cloud) {
  if (!cloud.valid()) throw CalibError(ErrorCode::kConfigError, "cloud labels do not match its points");
  out << std::setprecision(kFullPrecision);
  out << "ply\nformat ascii 1.0\n";
  if (!cloud.sensor.empty()) out << "comment sensor " << cloud.sensor << '\n';
  out << "comment stamp " << cloud.stamp << '\n';
  out << "element vertex " << cloud.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_ground_labels()) out << "property uchar ground\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (cloud.has_ground_labels()) out << ' ' << static_cast<int>(cloud.ground[i] ? 1 : 0);
    out << '\n';
  }
}

inline PointCloud read_cloud(std::istream& in, const std::string& source) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next() || detail::trim(line) != "ply") throw detail::parse_error(source, 1, "not a PLY file");

  std::optional<std::size_t> vertex_count;
  std::vector<std::string> properties;
  bool in_vertex = false;
  bool ended = false;
  while (next()) {
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") {
      ended = true;
      break;
    }
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw detail::parse_error(source, line_no, "only ascii PLY is supported");
    } else if (tok[0] == "comment") {
      if (tok.size() >= 3 && tok[1] == "sensor") cloud.sensor = tok[2];
      if (tok.size() >= 3 && tok[1] == "stamp") cloud.stamp = detail::parse_int(tok[2], source, line_no);
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw detail::parse_error(source, line_no, "malformed element line");
      const std::int64_t count = detail::parse_int(tok[2], source, line_no);
      if (count < 0) throw detail::parse_error(source, line_no, "negative element count");
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        vertex_count = static_cast<std::size_t>(count);
      } else if (count != 0) {
        throw detail::parse_error(source, line_no, "unsupported non-empty element '" + tok[1] + "'");
      }
    } else if (tok[0] == "property") {
      if (tok.size() != 3) throw detail::parse_error(source, line_no, "unsupported property declaration");
      if (in_vertex) properties.push_back(tok[2]);
    } else if (tok[0] != "obj_info") {
      throw detail::parse_error(source, line_no, "unknown header keyword '" + tok[0] + "'");
    }
  }
  if (!ended) throw detail::parse_error(source, line_no, "missing end_header");
  if (!vertex_count) throw detail::parse_error(source, line_no, "missing vertex element");

  int ix = -1, iy = -1, iz = -1, ig = -1;
  for (std::size_t i = 0; i < properties.size(); ++i) {
    const int idx = static_cast<int>(i);
    if (properties[i] == "x") ix = idx;
    if (properties[i] == "y") iy = idx;
    if (properties[i] == "z") iz = idx;
    if (properties[i] == "ground") ig = idx;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw detail::parse_error(source, line_no, "vertex lacks x, y or z");

  cloud.points.reserve(*vertex_count);
  if (ig >= 0) cloud.ground.reserve(*vertex_count);
  for (std::size_t v = 0; v < *vertex_count; ++v) {
    if (!next()) throw detail::parse_error(source, line_no + 1, "unexpected end of vertex data");
    const auto tok = detail::split_ws(line);
    if (tok.size() != properties.size())
      throw detail::parse_error(source, line_no,
                                "expected " + std::to_string(properties.size()) + " values, found " +
                                    std::to_string(tok.size()));
    cloud.points.emplace_back(detail::parse_double(tok[ix], source, line_no),
                              detail::parse_double(tok[iy], source, line_no),
                              detail::parse_double(tok[iz], source, line_no));
    if (ig >= 0) cloud.ground.push_back(detail::parse_double(tok[ig], source, line_no) != 0.0 ? 1 : 0);
  }
  return cloud;
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = detail::open_out(path);
  write_cloud(out, cloud);
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_cloud(in, path.string());
}

// ---------------------------------------------------------------------------
// Frame manifest: k,cloud_a,cloud_b with paths relative to the manifest.

struct ManifestEntry {
  std::int64_t k = 0;
  std::string cloud_a;
  std::string cloud_b;
};

inline constexpr std::string_view kManifestHeader = "k,cloud_a,cloud_b";

inline std::vector<ManifestEntry> read_manifest(std::istream& in, const std::string& source) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (!header) {
      if (text != kManifestHeader)
        throw detail::parse_error(source, line_no, "expected header '" + std::string(kManifestHeader) + "'");
      header = true;
      continue;
    }
    const auto f = detail::split(text, ',');
    if (f.size() != 3) throw detail::parse_error(source, line_no, "expected 3 fields, found " + std::to_string(f.size()));
    if (f[1].empty() || f[2].empty()) throw detail::parse_error(source, line_no, "empty cloud path");
    entries.push_back({detail::parse_int(f[0], source, line_no), f[1], f[2]});
  }
  if (!header) throw detail::parse_error(source, line_no + 1, "missing manifest header");
  return entries;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  auto out = detail::open_out(path);
  out << kManifestHeader << '\n';
  for (const ManifestEntry& e : entries) out << e.k << ',' << e.cloud_a << ',' << e.cloud_b << '\n';
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_manifest(in, path.string());
}

/// Loads every frame named by the manifest. Stamps recorded inside the
/// clouds must agree with the manifest row.
inline std::vector<FramePair> load_frames(const std::filesystem::path& manifest) {
  const auto base = manifest.parent_path();
  std::vector<FramePair> frames;
  for (const ManifestEntry& e : load_manifest(manifest)) {
    FramePair f;
    f.k = e.k;
    f.a = load_cloud(base / e.cloud_a);
    f.b = load_cloud(base / e.cloud_b);
    if (f.a.stamp != e.k || f.b.stamp != e.k)
      throw CalibError(ErrorCode::kFrameMismatch, "clouds of frame " + std::to_string(e.k) + " carry stamps " +
                                                      std::to_string(f.a.stamp) + " and " + std::to_string(f.b.stamp));
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// JSON

inline Json vec_to_json(const Eigen::VectorXd& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

inline Json pose_to_json(const Pose& p) {
  return {{"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
          {"rotation_wxyz", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}}};
}

inline Pose pose_from_json(const Json& j) {
  try {
    const auto t = j.at("translation").get<std::vector<double>>();
    const auto q = j.at("rotation_wxyz").get<std::vector<double>>();
    if (t.size() != 3 || q.size() != 4) throw CalibError(ErrorCode::kParseError, "pose arrays have the wrong length");
    if (std::abs(std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]) - 1.0) > 1e-3)
      throw CalibError(ErrorCode::kParseError, "pose quaternion is not unit length");
    return Pose{Rotation(q[0], q[1], q[2], q[3]), Vec3(t[0], t[1], t[2])};
  } catch (const Json::exception& e) {
    throw CalibError(ErrorCode::kParseError, std::string("bad pose: ") + e.what());
  }
}

inline Json diagnostics_to_json(const SolverDiagnostics& d) {
  return {{"input_count", d.input_count},
          {"filtered_count", d.filtered_count},
          {"pitch_roll_singular_values", d.pitch_roll_singular_values},
          {"yaw_translation_singular_values", d.yaw_translation_singular_values},
          {"pitch_roll_condition", d.pitch_roll_condition},
          {"yaw_translation_condition", d.yaw_translation_condition},
          {"constraint_residual", d.constraint_residual},
          {"nullspace_residual", d.nullspace_residual},
          {"yaw_translation_residual", d.yaw_translation_residual},
          {"pitch_roll_roots", d.pitch_roll_roots}};
}

inline SolverDiagnostics diagnostics_from_json(const Json& j) {
  SolverDiagnostics d;
  d.input_count = j.at("input_count").get<std::size_t>();
  d.filtered_count = j.at("filtered_count").get<std::size_t>();
  d.pitch_roll_singular_values = j.at("pitch_roll_singular_values").get<std::vector<double>>();
  d.yaw_translation_singular_values = j.at("yaw_translation_singular_values").get<std::vector<double>>();
  d.pitch_roll_condition = j.at("pitch_roll_condition").get<double>();
  d.yaw_translation_condition = j.at("yaw_translation_condition").get<double>();
  d.constraint_residual = j.at("constraint_residual").get<double>();
  d.nullspace_residual = j.at("nullspace_residual").get<double>();
  d.yaw_translation_residual = j.at("yaw_translation_residual").get<double>();
  d.pitch_roll_roots = j.at("pitch_roll_roots").get<int>();
  return d;
}

inline ExtrinsicsSource parse_source(const std::string& s) {
  if (s == "init") return ExtrinsicsSource::kInit;
  if (s == "kabsch") return ExtrinsicsSource::kKabsch;
  if (s == "refined") return ExtrinsicsSource::kRefined;
  throw CalibError(ErrorCode::kParseError, "unknown extrinsics source '" + s + "'");
}

inline Json extrinsics_to_json(const Extrinsics& e) {
  const Vec3 rpy = rotation_to_rpy(e.transform.rotation);
  return {{"schema_version", kSchemaVersion},
          {"transform", pose_to_json(e.transform)},
          {"rpy", {rpy.x(), rpy.y(), rpy.z()}},
          {"tz_observable", e.tz_observable},
          {"source", std::string(to_string(e.source))},
          {"diagnostics", diagnostics_to_json(e.diagnostics)}};
}

inline Extrinsics extrinsics_from_json(const Json& j) {
  try {
    Extrinsics e;
    e.transform = pose_from_json(j.at("transform"));
    e.tz_observable = j.at("tz_observable").get<bool>();
    e.source = parse_source(j.at("source").get<std::string>());
    if (j.contains("diagnostics")) e.diagnostics = diagnostics_from_json(j.at("diagnostics"));
    return e;
  } catch (const Json::exception& e) {
    throw CalibError(ErrorCode::kParseError, std::string("bad extrinsics: ") + e.what());
  }
}

/// Ground-truth file written by the simulator.
struct GroundTruth {
  std::string reference = "a";
  std::string target = "b";
  Pose extrinsic;
};

inline Json truth_to_json(const GroundTruth& t) {
  return {{"schema_version", kSchemaVersion},
          {"reference", t.reference},
          {"target", t.target},
          {"extrinsic", pose_to_json(t.extrinsic)}};
}

inline GroundTruth truth_from_json(const Json& j) {
  try {
    return {j.at("reference").get<std::string>(), j.at("target").get<std::string>(),
            pose_from_json(j.at("extrinsic"))};
  } catch (const Json::exception& e) {
    throw CalibError(ErrorCode::kParseError, std::string("bad ground truth: ") + e.what());
  }
}

inline Json load_json(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw CalibError(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const Json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace mlcalib
