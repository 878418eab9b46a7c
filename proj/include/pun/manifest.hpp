#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pun/error.hpp"
#include "pun/geometry.hpp"
#include "pun/image_metrics.hpp"

namespace pun {

inline constexpr int kManifestFormatVersion = 1;

struct ViewRecord {
  Viewpoint viewpoint;
  std::string image_path;
  std::map<std::string, std::string> umap_paths;  // keyed by uncertainty kind name

  friend bool operator==(const ViewRecord&, const ViewRecord&) = default;
};

struct InstanceRecord {
  std::string instance_id;
  std::string mesh_path;
  std::vector<ViewRecord> views;

  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct SkipRecord {
  std::string instance_id;
  std::string reason;

  friend bool operator==(const SkipRecord&, const SkipRecord&) = default;
};

// Paths inside a manifest are relative to the directory holding the manifest
// file (absolute paths are kept as is).
struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  int render_resolution = 128;
  int anchor_n_side = kAnchorNSide;
  std::vector<InstanceRecord> instances;
  std::vector<SkipRecord> skipped;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::size_t view_count() const {
    std::size_t n = 0;
    for (const auto& inst : instances) n += inst.views.size();
    return n;
  }

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.format_version == b.format_version && a.render_resolution == b.render_resolution &&
           a.anchor_n_side == b.anchor_n_side && a.instances == b.instances && a.skipped == b.skipped;
  }
};

inline nlohmann::ordered_json viewpoint_to_json(const Viewpoint& v) {
  return {{"elevation_deg", v.elevation_deg()}, {"azimuth_deg", v.azimuth_deg()}, {"radius", v.radius()}};
}

inline Viewpoint viewpoint_from_json(const nlohmann::json& j) {
  return Viewpoint(j.at("elevation_deg").get<double>(), j.at("azimuth_deg").get<double>(), j.at("radius").get<double>());
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["format_version"] = m.format_version;
  j["render_resolution"] = m.render_resolution;
  j["anchor_n_side"] = m.anchor_n_side;
  j["instances"] = nlohmann::ordered_json::array();
  for (const auto& inst : m.instances) {
    nlohmann::ordered_json ji;
    ji["instance_id"] = inst.instance_id;
    ji["mesh_path"] = inst.mesh_path;
    ji["view_records"] = nlohmann::ordered_json::array();
    for (const auto& v : inst.views) {
      nlohmann::ordered_json jv;
      jv["viewpoint"] = viewpoint_to_json(v.viewpoint);
      jv["image_path"] = v.image_path;
      jv["umap_paths"] = nlohmann::ordered_json::object();
      for (const auto& [k, p] : v.umap_paths) jv["umap_paths"][k] = p;
      ji["view_records"].push_back(std::move(jv));
    }
    j["instances"].push_back(std::move(ji));
  }
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& s : m.skipped) j["skipped"].push_back({{"instance_id", s.instance_id}, {"reason", s.reason}});
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  if (!j.contains("format_version")) fail(ErrorKind::kFormat, "manifest: missing mandatory 'format_version'");
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kManifestFormatVersion)
    fail(ErrorKind::kVersion, "manifest: format_version " + std::to_string(m.format_version) +
                                  " is not supported (only 1)");
  m.render_resolution = j.value("render_resolution", 128);
  m.anchor_n_side = j.value("anchor_n_side", kAnchorNSide);
  if (m.anchor_n_side != kAnchorNSide) fail(ErrorKind::kFormat, "manifest: anchor_n_side must be 2 for format_version 1");
  const nlohmann::json instances = j.value("instances", nlohmann::json::array());
  for (const auto& ji : instances) {
    InstanceRecord inst;
    inst.instance_id = ji.at("instance_id").get<std::string>();
    inst.mesh_path = ji.at("mesh_path").get<std::string>();
    const nlohmann::json views = ji.value("view_records", nlohmann::json::array());
    for (const auto& jv : views) {
      ViewRecord v;
      v.viewpoint = viewpoint_from_json(jv.at("viewpoint"));
      v.image_path = jv.at("image_path").get<std::string>();
      const nlohmann::json paths = jv.value("umap_paths", nlohmann::json::object());
      for (const auto& [k, p] : paths.items()) {
        parse_uncertainty_kind(k);
        v.umap_paths[k] = p.get<std::string>();
      }
      inst.views.push_back(std::move(v));
    }
    m.instances.push_back(std::move(inst));
  }
  const nlohmann::json skipped = j.value("skipped", nlohmann::json::array());
  for (const auto& js : skipped)
    m.skipped.push_back({js.at("instance_id").get<std::string>(), js.value("reason", std::string())});
  return m;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  f << text;
  if (!f) fail(ErrorKind::kIo, "write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline std::vector<std::string> missing_paths(const DatasetManifest& m) {
  std::vector<std::string> missing;
  auto check = [&](const std::string& p) {
    if (!std::filesystem::exists(m.resolve(p))) missing.push_back(m.resolve(p).string());
  };
  for (const auto& inst : m.instances) {
    check(inst.mesh_path);
    for (const auto& v : inst.views) {
      check(v.image_path);
      for (const auto& [k, p] : v.umap_paths) check(p);
    }
  }
  return missing;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, bool check_paths = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m = manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  if (check_paths) {
    const auto missing = missing_paths(m);
    if (!missing.empty()) {
      std::string msg = path.string() + ": " + std::to_string(missing.size()) + " referenced file(s) missing:";
      for (const auto& p : missing) msg += "\n  " + p;
      fail(ErrorKind::kIo, msg);
    }
  }
  return m;
}

}  // namespace pun
