#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "pun/bvh.hpp"
#include "pun/hull.hpp"
#include "pun/image_metrics.hpp"
#include "pun/manifest.hpp"
#include "pun/mesh.hpp"
#include "pun/render.hpp"
#include "pun/uncertainty_map.hpp"

namespace pun {

struct SimConfig {
  int resolution = 128;  // input image and anchor renders
  int grid = 64;         // voxels per axis of the reconstruction grid
  double grid_half_extent = 1.1;
  double fov_deg = kDefaultFovDeg;
  double ball_radius = 1.0;  // prior on the object's extent; <= 0 disables it
  CarveOptions carve{};
};

inline VoxelGrid initial_grid(const SimConfig& cfg) {
  VoxelGrid g = VoxelGrid::cube(cfg.grid, cfg.grid_half_extent);
  if (cfg.ball_radius > 0.0) clip_to_ball(g, cfg.ball_radius, cfg.carve);
  return g;
}

// A mesh with its acceleration structure. Copies share both.
class Scene {
 public:
  explicit Scene(TriMesh mesh)
      : mesh_(std::make_shared<const TriMesh>(std::move(mesh))), bvh_(std::make_shared<const Bvh>(*mesh_)) {}

  const TriMesh& mesh() const { return *mesh_; }
  const Bvh& bvh() const { return *bvh_; }

  Image render(const CameraPose& pose) const { return render_view(*bvh_, pose); }
  Image render(const Viewpoint& v, int resolution, double fov_deg = kDefaultFovDeg) const {
    return render(CameraPose::from_viewpoint(v, resolution, fov_deg));
  }

 private:
  std::shared_ptr<const TriMesh> mesh_;
  std::shared_ptr<const Bvh> bvh_;
};

// Single-view visual hull of the scene as seen from `view`.
inline VoxelGrid single_view_hull(const Scene& scene, const Viewpoint& view, const SimConfig& cfg) {
  const auto pose = CameraPose::from_viewpoint(view, cfg.resolution, cfg.fov_deg);
  return carve_hull(scene.render(pose), pose, initial_grid(cfg), cfg.carve);
}

// Uncertainty maps of several kinds from one set of renders: ground truth and
// single-view hull, both at the 48 anchors of `view`.
inline std::map<UncertaintyKind, UMap> make_umaps(const Scene& scene, const Viewpoint& view,
                                                  const std::vector<UncertaintyKind>& kinds, const SimConfig& cfg) {
  require(!kinds.empty(), "make_umap: no uncertainty kind requested");
  for (auto k : kinds) require_computable(k);
  require(scene.mesh().bounding_radius() < view.radius(), "make_umap: camera lies inside the object's bounding sphere");
  const VoxelGrid hull = single_view_hull(scene, view, cfg);
  const auto anchors = anchors_for_view(view);
  std::map<UncertaintyKind, std::vector<double>> values;
  for (const auto& a : anchors) {
    const auto pose = CameraPose::look_at_origin(a, view.radius(), cfg.resolution, cfg.fov_deg);
    const Image gt = scene.render(pose);
    const Image synth = render_hull(hull, pose);
    for (auto k : kinds) values[k].push_back(to_uncertainty(metric_value(gt, synth, k), k));
  }
  std::map<UncertaintyKind, UMap> out;
  for (auto k : kinds) out.emplace(k, UMap(std::move(values[k]), anchors, view, k, 0));
  return out;
}

inline UMap make_umap(const Scene& scene, const Viewpoint& view, UncertaintyKind kind, const SimConfig& cfg) {
  return make_umaps(scene, view, {kind}, cfg).at(kind);
}

struct DatasetOptions {
  int views_per_instance = 12;
  std::vector<UncertaintyKind> kinds = {UncertaintyKind::kPsnr};
  std::uint64_t seed = 0;
  SimConfig sim{};
};

// Evenly strided anchor indices; the seed picks the offset within one stride.
inline std::vector<std::size_t> dataset_view_indices(int views, std::uint64_t seed) {
  require(views >= 1 && views <= static_cast<int>(kAnchorCount), "gen_dataset: views per instance must be in [1, 48]");
  const std::size_t stride = kAnchorCount / static_cast<std::size_t>(views);
  const std::size_t offset = seed % stride;
  std::vector<std::size_t> out;
  for (int i = 0; i < views; ++i) out.push_back(offset + static_cast<std::size_t>(i) * stride);
  return out;
}

inline std::string two_digits(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%02zu", i);
  return buf;
}

// Writes <out>/<id>/mesh.obj, view_XX.ppm and view_XX_<kind>.umap per instance
// and <out>/manifest.json. A failing instance is skipped and recorded.
inline DatasetManifest gen_dataset(const std::vector<std::filesystem::path>& mesh_paths, const DatasetOptions& opts,
                                   const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  require(!mesh_paths.empty(), "gen_dataset: no meshes given");
  const auto indices = dataset_view_indices(opts.views_per_instance, opts.seed);
  fs::create_directories(out_dir);

  DatasetManifest m;
  m.render_resolution = opts.sim.resolution;
  m.base_dir = out_dir;
  std::set<std::string> used;
  for (const auto& path : mesh_paths) {
    std::string id = path.stem().string();
    for (int n = 2; used.count(id); ++n) id = path.stem().string() + "-" + std::to_string(n);
    used.insert(id);
    try {
      const Scene scene(load_obj(path));
      const fs::path dir = out_dir / id;
      fs::create_directories(dir);
      write_obj(scene.mesh(), dir / "mesh.obj");
      InstanceRecord inst{id, id + "/mesh.obj", {}};
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const Viewpoint view = Viewpoint::from_direction(canonical_anchors()[indices[i]], kDefaultRadius);
        const std::string stem = "view_" + two_digits(i);
        write_pnm(quantized(scene.render(view, opts.sim.resolution, opts.sim.fov_deg)), dir / (stem + ".ppm"));
        ViewRecord rec{view, id + "/" + stem + ".ppm", {}};
        for (const auto& [kind, umap] : make_umaps(scene, view, opts.kinds, opts.sim)) {
          const std::string name = stem + "_" + std::string(to_string(kind)) + ".umap";
          write_umap(umap, dir / name);
          rec.umap_paths[std::string(to_string(kind))] = id + "/" + name;
        }
        inst.views.push_back(std::move(rec));
      }
      m.instances.push_back(std::move(inst));
    } catch (const std::exception& e) {
      m.skipped.push_back({id, e.what()});
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace pun
