#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "pun/bvh.hpp"
#include "pun/error.hpp"
#include "pun/image.hpp"
#include "pun/render.hpp"

namespace pun {

inline constexpr double kUncoloredCell = 0.0;  // unobserved surface: no recorded radiance

// Dense occupancy grid over an axis-aligned box; every cell starts occupied
// and uncoloured. Colour is kept per cell with the frontality score of the
// view it came from.
class VoxelGrid {
 public:
  VoxelGrid(std::array<int, 3> dims, const Aabb& extent) : dims_(dims), extent_(extent) {
    for (int d : dims) require(d >= 8, "VoxelGrid: each dimension must be at least 8");
    for (int k = 0; k < 3; ++k) require(extent.hi[k] > extent.lo[k], "VoxelGrid: empty extent");
    cell_ = (extent.hi - extent.lo).cwiseQuotient(Vec3(dims[0], dims[1], dims[2]));
    const std::size_t n = cell_count();
    occupied_.assign(n, 1);
    color_.assign(n, {kUncoloredCell, kUncoloredCell, kUncoloredCell});
    score_.assign(n, -std::numeric_limits<double>::infinity());
  }

  // Cube [-half, half]^3 with `n` cells per axis; contains any unit-normalized mesh.
  static VoxelGrid cube(int n, double half_extent = 1.1) {
    Aabb box;
    box.lo = Vec3::Constant(-half_extent);
    box.hi = Vec3::Constant(half_extent);
    return VoxelGrid({n, n, n}, box);
  }

  const std::array<int, 3>& dims() const { return dims_; }
  const Aabb& extent() const { return extent_; }
  const Vec3& cell_size() const { return cell_; }
  double cell_diagonal() const { return cell_.norm(); }
  std::size_t cell_count() const { return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i;
  }
  std::array<int, 3> coords(std::size_t idx) const {
    const int i = static_cast<int>(idx % dims_[0]);
    const int j = static_cast<int>((idx / dims_[0]) % dims_[1]);
    const int k = static_cast<int>(idx / (static_cast<std::size_t>(dims_[0]) * dims_[1]));
    return {i, j, k};
  }
  bool in_range(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
  }

  Vec3 center(int i, int j, int k) const {
    return extent_.lo + Vec3((i + 0.5) * cell_.x(), (j + 0.5) * cell_.y(), (k + 0.5) * cell_.z());
  }
  Vec3 center(std::size_t idx) const {
    const auto c = coords(idx);
    return center(c[0], c[1], c[2]);
  }

  std::optional<std::size_t> cell_of(const Vec3& p) const {
    const Vec3 r = (p - extent_.lo).cwiseQuotient(cell_);
    const int i = static_cast<int>(std::floor(r.x())), j = static_cast<int>(std::floor(r.y())),
              k = static_cast<int>(std::floor(r.z()));
    if (!in_range(i, j, k)) return std::nullopt;
    return index(i, j, k);
  }

  bool occupied(std::size_t idx) const { return occupied_[idx] != 0; }
  bool occupied(int i, int j, int k) const { return in_range(i, j, k) && occupied_[index(i, j, k)] != 0; }
  void set_occupied(std::size_t idx, bool v) { occupied_[idx] = v ? 1 : 0; }

  const std::array<double, 3>& color(std::size_t idx) const { return color_[idx]; }
  double color_score(std::size_t idx) const { return score_[idx]; }
  void set_color(std::size_t idx, const std::array<double, 3>& c, double score) {
    color_[idx] = c;
    score_[idx] = score;
  }

  std::size_t occupied_count() const {
    return static_cast<std::size_t>(std::count(occupied_.begin(), occupied_.end(), std::uint8_t{1}));
  }
  bool empty() const { return occupied_count() == 0; }

  // Occupied with at least one empty (or out-of-grid) face neighbour.
  bool is_surface(std::size_t idx) const {
    if (!occupied(idx)) return false;
    const auto [i, j, k] = coords(idx);
    return !occupied(i + 1, j, k) || !occupied(i - 1, j, k) || !occupied(i, j + 1, k) || !occupied(i, j - 1, k) ||
           !occupied(i, j, k + 1) || !occupied(i, j, k - 1);
  }

  std::vector<Vec3> surface_points() const {
    std::vector<Vec3> pts;
    for (std::size_t idx = 0; idx < cell_count(); ++idx)
      if (is_surface(idx)) pts.push_back(center(idx));
    return pts;
  }

  // Outward normal estimate: sum of directions to empty cells in the 5x5x5
  // neighbourhood.
  Vec3 surface_normal(std::size_t idx) const {
    const auto [i, j, k] = coords(idx);
    Vec3 g = Vec3::Zero();
    for (int dk = -2; dk <= 2; ++dk)
      for (int dj = -2; dj <= 2; ++dj)
        for (int di = -2; di <= 2; ++di)
          if ((di || dj || dk) && !occupied(i + di, j + dj, k + dk)) g += Vec3(di, dj, dk).normalized();
    if (g.norm() < 1e-12) {
      const Vec3 c = center(idx) - 0.5 * (extent_.lo + extent_.hi);
      return c.norm() < 1e-12 ? Vec3(0, 0, 1) : Vec3(c.normalized());
    }
    return g.normalized();
  }

  bool same_occupancy(const VoxelGrid& o) const { return dims_ == o.dims_ && occupied_ == o.occupied_; }

  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
    return a.dims_ == b.dims_ && a.extent_.lo == b.extent_.lo && a.extent_.hi == b.extent_.hi &&
           a.occupied_ == b.occupied_ && a.color_ == b.color_ && a.score_ == b.score_;
  }

 private:
  std::array<int, 3> dims_;
  Aabb extent_;
  Vec3 cell_;
  std::vector<std::uint8_t> occupied_;
  std::vector<std::array<double, 3>> color_;
  std::vector<double> score_;
};

struct GridHit {
  std::size_t cell = 0;
  double t = 0.0;  // ray parameter at which the cell is entered
};

// Amanatides–Woo traversal; first occupied cell along origin + t·dir, t ≥ 0.
inline std::optional<GridHit> first_occupied(const VoxelGrid& grid, const Vec3& origin, const Vec3& dir,
                                             double t_max = std::numeric_limits<double>::infinity()) {
  const Aabb& box = grid.extent();
  double t0 = 0.0, t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    if (dir[k] == 0.0) {
      if (origin[k] < box.lo[k] || origin[k] > box.hi[k]) return std::nullopt;
      continue;
    }
    double a = (box.lo[k] - origin[k]) / dir[k], b = (box.hi[k] - origin[k]) / dir[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1) return std::nullopt;
  const auto& dims = grid.dims();
  const Vec3& cs = grid.cell_size();
  const Vec3 p = origin + t0 * dir;
  std::array<int, 3> cell{}, step{};
  std::array<double, 3> t_next{}, t_delta{};
  for (int k = 0; k < 3; ++k) {
    cell[k] = std::clamp(static_cast<int>(std::floor((p[k] - box.lo[k]) / cs[k])), 0, dims[k] - 1);
    if (dir[k] > 0.0) {
      step[k] = 1;
      t_next[k] = (box.lo[k] + (cell[k] + 1) * cs[k] - origin[k]) / dir[k];
      t_delta[k] = cs[k] / dir[k];
    } else if (dir[k] < 0.0) {
      step[k] = -1;
      t_next[k] = (box.lo[k] + cell[k] * cs[k] - origin[k]) / dir[k];
      t_delta[k] = -cs[k] / dir[k];
    } else {
      step[k] = 0;
      t_next[k] = std::numeric_limits<double>::infinity();
      t_delta[k] = std::numeric_limits<double>::infinity();
    }
  }
  double t = t0;
  while (t <= t1) {
    const std::size_t idx = grid.index(cell[0], cell[1], cell[2]);
    if (grid.occupied(idx)) return GridHit{idx, t};
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    t = t_next[axis];
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= dims[axis]) return std::nullopt;
    t_next[axis] += t_delta[axis];
  }
  return std::nullopt;
}

struct CarveOptions {
  // false: clear a cell when its centre projects onto background (the plain
  // centre test). true: clear only when no foreground pixel lies within the
  // cell's projected footprint, so the hull always contains the object.
  bool conservative = false;
};

// Clears cells inconsistent with the silhouette seen from `pose`. The object
// is assumed fully in frame, so whatever projects outside the image is empty.
inline void carve_silhouette(VoxelGrid& grid, const Image& image, const CameraPose& pose, const CarveOptions& opts = {}) {
  require(image.width() == pose.resolution && image.height() == pose.resolution,
          "carve: image size does not match the pose resolution");
  const auto mask = silhouette(image);
  if (count_true(mask) == 0) fail(ErrorKind::kEmptyHull, "carve: silhouette is empty");
  const int n = pose.resolution;
  auto fg = [&](int x, int y) { return mask[static_cast<std::size_t>(y) * n + x]; };
  const double half_diag = 0.5 * grid.cell_diagonal();
  for (std::size_t idx = 0; idx < grid.cell_count(); ++idx) {
    if (!grid.occupied(idx)) continue;
    const auto pr = pose.project(grid.center(idx));
    bool keep = false;
    if (pr.depth <= 0.0) {
      keep = false;
    } else if (!opts.conservative) {
      const bool inside = pr.px >= 0.0 && pr.py >= 0.0 && pr.px < n && pr.py < n;
      keep = inside && fg(static_cast<int>(pr.px), static_cast<int>(pr.py));
    } else {
      const double margin = half_diag * pose.pixels_per_unit(pr.depth) + std::sqrt(0.5);
      const int x0 = std::max(0, static_cast<int>(std::floor(pr.px - margin - 0.5)));
      const int x1 = std::min(n - 1, static_cast<int>(std::ceil(pr.px + margin - 0.5)));
      const int y0 = std::max(0, static_cast<int>(std::floor(pr.py - margin - 0.5)));
      const int y1 = std::min(n - 1, static_cast<int>(std::ceil(pr.py + margin - 0.5)));
      for (int y = y0; y <= y1 && !keep; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!fg(x, y)) continue;
          const double dx = x + 0.5 - pr.px, dy = y + 0.5 - pr.py;
          if (dx * dx + dy * dy <= margin * margin) {
            keep = true;
            break;
          }
        }
    }
    if (!keep) grid.set_occupied(idx, false);
  }
}

// Gives surface cells visible from `pose` the colour of the pixel their
// centre projects to, unless a more frontal view already coloured them.
inline void color_from_view(VoxelGrid& grid, const Image& image, const CameraPose& pose) {
  const int n = pose.resolution;
  const double tol = grid.cell_diagonal();
  for (std::size_t idx = 0; idx < grid.cell_count(); ++idx) {
    if (!grid.is_surface(idx)) continue;
    const Vec3 c = grid.center(idx);
    const auto pr = pose.project(c);
    if (pr.depth <= 0.0 || pr.px < 0.0 || pr.py < 0.0 || pr.px >= n || pr.py >= n) continue;
    const Vec3 to_cam = pose.position - c;
    const double score = grid.surface_normal(idx).dot(to_cam.normalized());
    if (score <= 0.0 || score <= grid.color_score(idx)) continue;
    const auto hit = first_occupied(grid, pose.position, c - pose.position, 1.0 + 1e-9);
    if (!hit) continue;
    if (hit->cell != idx && (grid.center(hit->cell) - c).norm() > tol) continue;
    const int x = static_cast<int>(pr.px), y = static_cast<int>(pr.py);
    // Conservative carving keeps cells whose centre lands on background; those stay uncoloured.
    if (image.luminance(x, y) >= kSilhouetteThreshold) continue;
    // Undo the observing view's shading so the cell stores reflectance.
    const double lit = shading_factor(grid.surface_normal(idx), pose);
    std::array<double, 3> col{};
    for (int ch = 0; ch < 3; ++ch) col[ch] = std::clamp(image.at(x, y, image.channels() == 3 ? ch : 0) / lit, 0.0, 1.0);
    grid.set_color(idx, col, score);
  }
}

// Clears cells outside the ball of `radius` about the origin, by the centre
// rule or, when conservative, only cells lying wholly outside. Meshes are
// normalized to a unit bounding sphere, so this is free knowledge.
inline void clip_to_ball(VoxelGrid& grid, double radius, const CarveOptions& opts = {}) {
  const double reach = opts.conservative ? radius + 0.5 * grid.cell_diagonal() : radius;
  for (std::size_t idx = 0; idx < grid.cell_count(); ++idx)
    if (grid.occupied(idx) && grid.center(idx).norm() > reach) grid.set_occupied(idx, false);
}

// Single-view carve: silhouette carving followed by colouring from the same view.
inline VoxelGrid carve_hull(const Image& image, const CameraPose& pose, VoxelGrid grid, const CarveOptions& opts = {}) {
  carve_silhouette(grid, image, pose, opts);
  if (grid.empty()) fail(ErrorKind::kEmptyHull, "carve: no cells survived");
  color_from_view(grid, image, pose);
  return grid;
}

inline Image render_hull(const VoxelGrid& grid, const CameraPose& pose) {
  if (grid.empty()) fail(ErrorKind::kEmptyHull, "render_hull: grid has no occupied cells");
  const int n = pose.resolution;
  std::vector<double> data(static_cast<std::size_t>(n) * n * 3, kBackground);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto hit = first_occupied(grid, pose.position, pose.pixel_dir(x, y));
      if (!hit) continue;
      const auto& c = grid.color(hit->cell);
      const double lit = shading_factor(grid.surface_normal(hit->cell), pose);
      const std::size_t i = (static_cast<std::size_t>(y) * n + x) * 3;
      for (int ch = 0; ch < 3; ++ch) data[i + ch] = std::clamp(c[ch] * lit, 0.0, 1.0);
    }
  return Image(n, n, 3, std::move(data));
}

}  // namespace pun
