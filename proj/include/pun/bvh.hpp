#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "pun/geometry.hpp"
#include "pun/mesh.hpp"

namespace pun {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // need not be unit length; t is measured in multiples of dir
};

struct Hit {
  std::size_t face = 0;
  double t = 0.0;
  double u = 0.0;  // barycentric weight of vertex 1
  double v = 0.0;  // barycentric weight of vertex 2
};

// Möller–Trumbore ray/triangle test. Returns the hit for t in (t_min, t_max).
inline std::optional<Hit> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c,
                                             double t_min, double t_max) {
  constexpr double kEps = 1e-12;
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = ray.dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < kEps) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.dir.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= t_min || t >= t_max) return std::nullopt;
  return Hit{0, t, u, v};
}

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void grow(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void grow(const Aabb& o) {
    lo = lo.cwiseMin(o.lo);
    hi = hi.cwiseMax(o.hi);
  }
  double squared_distance(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(Vec3::Zero()).cwiseMax(p - hi);
    return d.squaredNorm();
  }
  // Slab test; returns whether the ray overlaps [t_min, t_max] inside the box.
  bool hit(const Vec3& origin, const Vec3& inv_dir, double t_min, double t_max) const {
    for (int k = 0; k < 3; ++k) {
      double t0 = (lo[k] - origin[k]) * inv_dir[k];
      double t1 = (hi[k] - origin[k]) * inv_dir[k];
      if (t0 > t1) std::swap(t0, t1);
      // NaN (0 * inf) means the ray lies in the slab plane: treat as overlap.
      if (!std::isnan(t0)) t_min = std::max(t_min, t0);
      if (!std::isnan(t1)) t_max = std::min(t_max, t1);
      if (t_min > t_max) return false;
    }
    return true;
  }
};

// Bounding volume hierarchy over a TriMesh (median split on the widest
// centroid axis). Holds a reference to the mesh, which must outlive it.
class Bvh {
 public:
  explicit Bvh(const TriMesh& mesh) : mesh_(&mesh) {
    order_.resize(mesh.face_count());
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.reserve(mesh.face_count());
    for (std::size_t f = 0; f < mesh.face_count(); ++f) centroids_.push_back(mesh.centroid(f));
    nodes_.reserve(2 * mesh.face_count());
    nodes_.emplace_back();
    build(0, 0, order_.size());
  }

  const TriMesh& mesh() const { return *mesh_; }

  // Nearest hit along the ray within (t_min, t_max); ties go to the lowest face index.
  std::optional<Hit> intersect(const Ray& ray, double t_min = 1e-9,
                               double t_max = std::numeric_limits<double>::infinity()) const {
    const Vec3 inv(1.0 / ray.dir.x(), 1.0 / ray.dir.y(), 1.0 / ray.dir.z());
    std::optional<Hit> best;
    std::array<std::uint32_t, 64> stack{};
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& n = nodes_[stack[--sp]];
      const double limit = best ? best->t : t_max;
      if (!n.box.hit(ray.origin, inv, t_min, limit)) continue;
      if (n.count > 0) {
        for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
          const std::size_t f = order_[i];
          const double cur = best ? best->t : t_max;
          auto h = intersect_triangle(ray, mesh_->v(f, 0), mesh_->v(f, 1), mesh_->v(f, 2), t_min,
                                      std::nextafter(cur, std::numeric_limits<double>::infinity()));
          if (!h) continue;
          if (!best || h->t < best->t || (h->t == best->t && f < best->face)) {
            h->face = f;
            best = h;
          }
        }
      } else {
        stack[sp++] = n.first;
        stack[sp++] = n.first + 1;
      }
    }
    return best;
  }

  struct Nearest {
    std::size_t face = 0;
    Vec3 point;
    double distance = 0.0;
  };

  // Exact closest surface point to `p`.
  Nearest nearest(const Vec3& p) const {
    Nearest best{0, Vec3::Zero(), std::numeric_limits<double>::infinity()};
    double best_sq = best.distance;
    std::array<std::uint32_t, 64> stack{};
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
      const Node& n = nodes_[stack[--sp]];
      if (n.box.squared_distance(p) > best_sq) continue;
      if (n.count > 0) {
        for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
          const std::size_t f = order_[i];
          const Vec3 q = closest_point_on_triangle(p, mesh_->v(f, 0), mesh_->v(f, 1), mesh_->v(f, 2));
          const double d = (q - p).squaredNorm();
          if (d < best_sq || (d == best_sq && f < best.face)) {
            best_sq = d;
            best = {f, q, 0.0};
          }
        }
      } else {
        const Node& l = nodes_[n.first];
        const Node& r = nodes_[n.first + 1];
        // Visit the closer child first (pushed last).
        if (l.box.squared_distance(p) < r.box.squared_distance(p)) {
          stack[sp++] = n.first + 1;
          stack[sp++] = n.first;
        } else {
          stack[sp++] = n.first;
          stack[sp++] = n.first + 1;
        }
      }
    }
    best.distance = std::sqrt(best_sq);
    return best;
  }

 private:
  struct Node {
    Aabb box;
    std::uint32_t first = 0;  // leaf: first index into order_; inner: left child node index
    std::uint32_t count = 0;  // leaf triangle count; 0 for inner nodes
  };

  static constexpr std::size_t kLeafSize = 4;

  void build(std::uint32_t idx, std::size_t begin, std::size_t end) {
    Aabb box, cbox;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t f = order_[i];
      for (int k = 0; k < 3; ++k) box.grow(mesh_->v(f, k));
      cbox.grow(centroids_[f]);
    }
    nodes_[idx].box = box;
    const Vec3 ext = cbox.hi - cbox.lo;
    if (end - begin <= kLeafSize || ext.maxCoeff() <= 0.0) {
      nodes_[idx].first = static_cast<std::uint32_t>(begin);
      nodes_[idx].count = static_cast<std::uint32_t>(end - begin);
      return;
    }
    int axis = 0;
    ext.maxCoeff(&axis);
    const std::size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    // Children live in adjacent slots; the inner node stores the left index.
    const auto left = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[idx].first = left;
    nodes_[idx].count = 0;
    build(left, begin, mid);
    build(left + 1, mid, end);
  }

  const TriMesh* mesh_;
  std::vector<std::size_t> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

}  // namespace pun
