#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "pun/bvh.hpp"
#include "pun/hull.hpp"
#include "pun/image_metrics.hpp"
#include "pun/random.hpp"
#include "pun/simulator.hpp"

namespace pun {

inline constexpr std::size_t kEvalAzimuths = 8;
inline constexpr std::size_t kEvalElevations = 5;
inline constexpr std::size_t kMaxSelected = 20;

// 8 azimuths x 5 elevations. Each angle is drawn inside its own stratum, so
// azimuths and elevations are distinct by construction; elevations are
// stratified in cos so the set is area-balanced.
struct EvalPoseSet {
  std::vector<Viewpoint> poses;
  std::vector<double> azimuths_deg;
  std::vector<double> elevations_deg;
  std::uint64_t seed = 0;

  static EvalPoseSet make(std::uint64_t seed, double radius = kDefaultRadius) {
    EvalPoseSet s;
    s.seed = seed;
    Rng rng = Rng::derive(seed, {0xE7A1});
    const double az_step = 360.0 / kEvalAzimuths;
    for (std::size_t i = 0; i < kEvalAzimuths; ++i)
      s.azimuths_deg.push_back(az_step * (static_cast<double>(i) + rng.uniform()));
    const double z_step = 2.0 / kEvalElevations;
    for (std::size_t i = 0; i < kEvalElevations; ++i) {
      // keep a small gap at the stratum edges so neighbouring draws never coincide
      const double z = 1.0 - z_step * (static_cast<double>(i) + rng.uniform(0.02, 0.98));
      s.elevations_deg.push_back(rad2deg(std::acos(z)));
    }
    for (double el : s.elevations_deg)
      for (double az : s.azimuths_deg) s.poses.emplace_back(el, az, radius);
    return s;
  }
};

// Per-face visibility accumulated over a growing set of viewpoints. A face is
// seen from a camera when it faces the camera and the segment from the camera
// to its centroid first meets the mesh at that face.
class VisibilityTracker {
 public:
  explicit VisibilityTracker(const Bvh& bvh) : bvh_(&bvh), seen_(bvh.mesh().face_count(), 0) {}

  void add(const Viewpoint& view) {
    const TriMesh& m = bvh_->mesh();
    const Vec3 cam = view.position();
    for (std::size_t f = 0; f < m.face_count(); ++f) {
      if (seen_[f]) continue;
      const Vec3 c = m.centroid(f);
      if (m.normal(f).dot(cam - c) <= 0.0) continue;
      const auto hit = bvh_->intersect(Ray{cam, c - cam}, 1e-9, 1.0 + 1e-6);
      if (hit && hit->face == f) {
        seen_[f] = 1;
        ++count_;
        area_ += m.area(f);
      }
    }
  }

  double vis() const { return static_cast<double>(count_) / static_cast<double>(seen_.size()); }
  double vis_area() const { return std::min(1.0, area_ / bvh_->mesh().total_area()); }
  bool seen(std::size_t face) const { return seen_[face] != 0; }

 private:
  const Bvh* bvh_;
  std::vector<char> seen_;
  std::size_t count_ = 0;
  double area_ = 0.0;
};

struct Visibility {
  double vis = 0.0;
  double vis_area = 0.0;
};

inline Visibility visibility(const Bvh& bvh, const std::vector<Viewpoint>& viewpoints) {
  require(!viewpoints.empty(), "visibility: no viewpoints");
  VisibilityTracker t(bvh);
  for (const auto& v : viewpoints) t.add(v);
  return {t.vis(), t.vis_area()};
}

inline Visibility visibility(const TriMesh& mesh, const std::vector<Viewpoint>& viewpoints) {
  return visibility(Bvh(mesh), viewpoints);
}

inline constexpr std::size_t kMinAccuracyPoints = 100;

// Mean distance from reconstructed points to the ground-truth surface.
inline double mesh_accuracy(const std::vector<Vec3>& recon_points, const Bvh& gt) {
  require(recon_points.size() >= kMinAccuracyPoints,
          "mesh_accuracy: need at least 100 points, got " + std::to_string(recon_points.size()));
  double sum = 0.0;
  for (const auto& p : recon_points) sum += gt.nearest(p).distance;
  return sum / static_cast<double>(recon_points.size());
}

inline double mesh_accuracy(const std::vector<Vec3>& recon_points, const TriMesh& gt) {
  return mesh_accuracy(recon_points, Bvh(gt));
}

inline constexpr double kDefaultCompletionTau = 0.05;

// Fraction of gt samples with a reconstructed point within tau. Points are
// bucketed on a tau-sized grid so only the 27 surrounding buckets are searched.
inline double completion_ratio(const std::vector<Vec3>& gt_samples, const std::vector<Vec3>& recon_points,
                               double tau = kDefaultCompletionTau) {
  require(tau > 0.0, "completion_ratio: tau must be positive");
  require(!gt_samples.empty() && !recon_points.empty(), "completion_ratio: point sets must be non-empty");
  struct KeyHash {
    std::size_t operator()(const std::array<long, 3>& k) const {
      std::uint64_t h = 1469598103934665603ull;
      for (long v : k) h = (h ^ static_cast<std::uint64_t>(v)) * 1099511628211ull;
      return static_cast<std::size_t>(h);
    }
  };
  auto key = [tau](const Vec3& p) {
    return std::array<long, 3>{static_cast<long>(std::floor(p.x() / tau)), static_cast<long>(std::floor(p.y() / tau)),
                               static_cast<long>(std::floor(p.z() / tau))};
  };
  std::unordered_map<std::array<long, 3>, std::vector<std::size_t>, KeyHash> buckets;
  for (std::size_t i = 0; i < recon_points.size(); ++i) buckets[key(recon_points[i])].push_back(i);
  const double tau2 = tau * tau;
  std::size_t hits = 0;
  for (const auto& g : gt_samples) {
    const auto k = key(g);
    bool found = false;
    for (long dx = -1; dx <= 1 && !found; ++dx)
      for (long dy = -1; dy <= 1 && !found; ++dy)
        for (long dz = -1; dz <= 1 && !found; ++dz) {
          const auto it = buckets.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == buckets.end()) continue;
          for (std::size_t i : it->second)
            if ((recon_points[i] - g).squaredNorm() <= tau2) {
              found = true;
              break;
            }
        }
    if (found) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gt_samples.size());
}

inline constexpr std::size_t kDefaultSurfaceSamples = 10000;

// Area-weighted uniform samples on the mesh surface.
inline std::vector<Vec3> sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "sample_surface: n must be at least 1");
  std::vector<double> cdf(mesh.face_count());
  double acc = 0.0;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) cdf[f] = (acc += mesh.area(f));
  Rng rng = Rng::derive(seed, {0x5A3F});
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    std::size_t f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    f = std::min(f, mesh.face_count() - 1);
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    out.push_back((1.0 - r1) * mesh.v(f, 0) + r1 * (1.0 - r2) * mesh.v(f, 1) + r1 * r2 * mesh.v(f, 2));
  }
  return out;
}

// Visual hull carved from every view in `views`, then coloured from all of them.
inline VoxelGrid multi_view_hull(const Scene& scene, const std::vector<Viewpoint>& views, const SimConfig& cfg) {
  require(!views.empty(), "multi_view_hull: no views");
  VoxelGrid grid = initial_grid(cfg);
  std::vector<std::pair<CameraPose, Image>> shots;
  shots.reserve(views.size());
  for (const auto& v : views) {
    const auto pose = CameraPose::from_viewpoint(v, cfg.resolution, cfg.fov_deg);
    shots.emplace_back(pose, scene.render(pose));
    carve_silhouette(grid, shots.back().second, pose, cfg.carve);
  }
  if (grid.empty()) fail(ErrorKind::kEmptyHull, "multi_view_hull: no cells survived");
  for (const auto& [pose, img] : shots) color_from_view(grid, img, pose);
  return grid;
}

struct EvalConfig {
  SimConfig sim{};
  double tau = kDefaultCompletionTau;
  std::size_t surface_samples = kDefaultSurfaceSamples;
  std::uint64_t sample_seed = 0;
};

struct PoseScore {
  Viewpoint pose;
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

struct EvalReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double acc = 0.0;
  double cr = 0.0;
  double vis = 0.0;
  double vis_area = 0.0;
  std::size_t selected_count = 0;
  std::vector<PoseScore> per_pose;
};

// Ground-truth renders and surface samples for one mesh and pose set, reused
// across every selection evaluated against them.
class EvalContext {
 public:
  EvalContext(Scene scene, EvalPoseSet poses, EvalConfig cfg)
      : scene_(std::move(scene)), poses_(std::move(poses)), cfg_(cfg) {
    require(poses_.poses.size() == kEvalAzimuths * kEvalElevations, "EvalContext: expected 40 poses");
    gt_.reserve(poses_.poses.size());
    for (const auto& p : poses_.poses) gt_.push_back(scene_.render(pose_for(p)));
    gt_samples_ = sample_surface(scene_.mesh(), cfg_.surface_samples, cfg_.sample_seed);
  }

  const Scene& scene() const { return scene_; }
  const EvalPoseSet& poses() const { return poses_; }
  const EvalConfig& config() const { return cfg_; }

  EvalReport evaluate(const std::vector<Viewpoint>& selected) const {
    require(!selected.empty() && selected.size() <= kMaxSelected,
            "evaluate_selection: between 1 and 20 views required, got " + std::to_string(selected.size()));
    return evaluate_hull(multi_view_hull(scene_, selected, cfg_.sim), selected);
  }

  // Scores an already built hull; `views` only feed the visibility columns.
  EvalReport evaluate_hull(const VoxelGrid& hull, const std::vector<Viewpoint>& views) const {
    EvalReport r;
    r.selected_count = views.size();
    for (std::size_t i = 0; i < poses_.poses.size(); ++i) {
      const Image synth = render_hull(hull, pose_for(poses_.poses[i]));
      PoseScore s{poses_.poses[i], psnr(gt_[i], synth), ssim(gt_[i], synth), mse(gt_[i], synth)};
      r.psnr += s.psnr;
      r.ssim += s.ssim;
      r.mse += s.mse;
      r.per_pose.push_back(s);
    }
    const double n = static_cast<double>(poses_.poses.size());
    r.psnr /= n;
    r.ssim /= n;
    r.mse /= n;
    const auto surface = hull.surface_points();
    r.acc = mesh_accuracy(surface, scene_.bvh());
    r.cr = completion_ratio(gt_samples_, surface, cfg_.tau);
    const auto v = visibility(scene_.bvh(), views);
    r.vis = v.vis;
    r.vis_area = v.vis_area;
    return r;
  }

 private:
  CameraPose pose_for(const Viewpoint& v) const {
    return CameraPose::from_viewpoint(v, cfg_.sim.resolution, cfg_.sim.fov_deg);
  }

  Scene scene_;
  EvalPoseSet poses_;
  EvalConfig cfg_;
  std::vector<Image> gt_;
  std::vector<Vec3> gt_samples_;
};

inline EvalReport evaluate_selection(const Scene& scene, const std::vector<Viewpoint>& selected,
                                     const EvalPoseSet& poses, const EvalConfig& cfg) {
  return EvalContext(scene, poses, cfg).evaluate(selected);
}

inline std::string encode_report(const EvalReport& r) {
  std::string s;
  auto kv = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  kv("psnr", format_real(r.psnr));
  kv("ssim", format_real(r.ssim));
  kv("mse", format_real(r.mse));
  kv("acc", format_real(r.acc));
  kv("cr", format_real(r.cr));
  kv("vis", format_real(r.vis));
  kv("vis_area", format_real(r.vis_area));
  kv("selected", std::to_string(r.selected_count));
  kv("poses", std::to_string(r.per_pose.size()));
  return s;
}

inline std::string encode_per_pose_csv(const EvalReport& r) {
  std::string s = "pose,elevation_deg,azimuth_deg,psnr,ssim,mse\n";
  for (std::size_t i = 0; i < r.per_pose.size(); ++i) {
    const auto& p = r.per_pose[i];
    s += std::to_string(i) + "," + format_real(p.pose.elevation_deg()) + "," + format_real(p.pose.azimuth_deg()) +
         "," + format_real(p.psnr) + "," + format_real(p.ssim) + "," + format_real(p.mse) + "\n";
  }
  return s;
}

inline const char* kTableHeader = "method                 PSNR     SSIM      MSE      Acc       CR      Vis    Vis.A";

inline std::string table_row(const std::string& label, const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18.18s %8.3f %8.4f %8.5f %8.4f %8.4f %8.4f %8.4f", label.c_str(), r.psnr, r.ssim,
                r.mse, r.acc, r.cr, r.vis, r.vis_area);
  return buf;
}

}  // namespace pun
