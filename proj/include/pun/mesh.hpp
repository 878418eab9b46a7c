#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pun/error.hpp"
#include "pun/geometry.hpp"
#include "pun/uncertainty_map.hpp"

namespace pun {

using Face = std::array<std::uint32_t, 3>;

inline constexpr double kDegenerateArea = 1e-12;

// Indexed triangle mesh with cached per-face area and unit normal.
class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    require(!faces_.empty(), "TriMesh: no faces");
    areas_.reserve(faces_.size());
    normals_.reserve(faces_.size());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      for (auto idx : faces_[f])
        require(idx < vertices_.size(), "TriMesh: face " + std::to_string(f) + " index out of range");
      const Vec3 c = (v(f, 1) - v(f, 0)).cross(v(f, 2) - v(f, 0));
      const double area = 0.5 * c.norm();
      require(area > kDegenerateArea, "TriMesh: face " + std::to_string(f) + " is degenerate");
      areas_.push_back(area);
      normals_.push_back(c.normalized());
      total_area_ += area;
    }
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  std::size_t face_count() const { return faces_.size(); }
  double area(std::size_t f) const { return areas_[f]; }
  const Vec3& normal(std::size_t f) const { return normals_[f]; }
  double total_area() const { return total_area_; }
  const Vec3& v(std::size_t f, int k) const { return vertices_[faces_[f][k]]; }
  Vec3 centroid(std::size_t f) const { return (v(f, 0) + v(f, 1) + v(f, 2)) / 3.0; }

  double bounding_radius() const {
    double r = 0.0;
    for (const auto& p : vertices_) r = std::max(r, p.norm());
    return r;
  }

  // Recentres on the vertex centroid and scales so the farthest vertex sits
  // at distance `radius`.
  TriMesh normalized(double radius = 1.0) const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : vertices_) c += p;
    c /= static_cast<double>(vertices_.size());
    double r = 0.0;
    for (const auto& p : vertices_) r = std::max(r, (p - c).norm());
    require(r > 0.0, "TriMesh: all vertices coincide");
    std::vector<Vec3> out;
    out.reserve(vertices_.size());
    for (const auto& p : vertices_) out.push_back((p - c) * (radius / r));
    return TriMesh(std::move(out), faces_);
  }

  // FNV-1a over the raw vertex and index bytes; identifies a mesh in run records.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
    };
    for (const auto& p : vertices_) mix(p.data(), sizeof(double) * 3);
    for (const auto& f : faces_) mix(f.data(), sizeof(std::uint32_t) * 3);
    return h;
  }

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<double> areas_;
  std::vector<Vec3> normals_;
  double total_area_ = 0.0;
};

// Parses vertices and (polygonal) faces; polygons are fanned from their first
// vertex, degenerate triangles are dropped. Returns the raw, un-normalized mesh.
inline TriMesh parse_obj(std::istream& in, const std::string& origin) {
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) fail(ErrorKind::kFormat, origin + ":" + std::to_string(lineno) + ": malformed vertex");
      verts.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        long i = 0;
        try {
          i = std::stol(tok.substr(0, slash));
        } catch (const std::exception&) {
          fail(ErrorKind::kFormat, origin + ":" + std::to_string(lineno) + ": malformed face index '" + tok + "'");
        }
        if (i < 0) i = static_cast<long>(verts.size()) + i + 1;
        if (i < 1 || static_cast<std::size_t>(i) > verts.size())
          fail(ErrorKind::kFormat, origin + ":" + std::to_string(lineno) + ": face index out of range");
        idx.push_back(static_cast<std::uint32_t>(i - 1));
      }
      if (idx.size() < 3) fail(ErrorKind::kFormat, origin + ":" + std::to_string(lineno) + ": face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        const Face f{idx[0], idx[k], idx[k + 1]};
        const double a = 0.5 * (verts[f[1]] - verts[f[0]]).cross(verts[f[2]] - verts[f[0]]).norm();
        if (a > kDegenerateArea) faces.push_back(f);
      }
    }
  }
  if (verts.empty() || faces.empty()) fail(ErrorKind::kFormat, origin + ": mesh has no usable triangles");
  return TriMesh(std::move(verts), std::move(faces));
}

// Loads, triangulates and normalizes to a unit bounding sphere centred at the
// vertex centroid.
inline TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kFormat, "cannot read OBJ: " + path.string());
  return parse_obj(f, path.string()).normalized(1.0);
}

inline std::string encode_obj(const TriMesh& m) {
  std::string out;
  for (const auto& p : m.vertices())
    out += "v " + format_real(p.x()) + " " + format_real(p.y()) + " " + format_real(p.z()) + "\n";
  for (const auto& f : m.faces())
    out += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " + std::to_string(f[2] + 1) + "\n";
  return out;
}

inline void write_obj(const TriMesh& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  f << encode_obj(m);
}

// Geodesic sphere: icosahedron with each triangle split 4-way `subdiv` times.
inline TriMesh make_icosphere(int subdiv) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  return TriMesh(std::move(v), std::move(f));
}

// Boundary surface of a union of unit cubes. Each exposed cube face is split
// into `split`×`split` quads (two triangles each), wound outward.
inline TriMesh make_voxel_solid(int nx, int ny, int nz, const std::vector<bool>& occupied, int split = 1) {
  require(static_cast<std::size_t>(nx) * ny * nz == occupied.size(), "make_voxel_solid: occupancy size mismatch");
  require(split >= 1, "make_voxel_solid: split must be >= 1");
  auto occ = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return static_cast<bool>(occupied[(static_cast<std::size_t>(z) * ny + y) * nx + x]);
  };
  std::map<std::tuple<long, long, long>, std::uint32_t> index;
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  auto vertex = [&](long ix, long iy, long iz) {
    const auto key = std::make_tuple(ix, iy, iz);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    verts.emplace_back(static_cast<double>(ix) / split, static_cast<double>(iy) / split, static_cast<double>(iz) / split);
    const auto id = static_cast<std::uint32_t>(verts.size() - 1);
    index.emplace(key, id);
    return id;
  };
  // For each axis and direction, the two in-plane axes ordered so that
  // (u × v) points along the outward normal.
  struct Dir {
    int axis, sign, u, v;
  };
  const Dir dirs[6] = {{0, 1, 1, 2}, {0, -1, 2, 1}, {1, 1, 2, 0}, {1, -1, 0, 2}, {2, 1, 0, 1}, {2, -1, 1, 0}};
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!occ(x, y, z)) continue;
        const int cell[3] = {x, y, z};
        for (const auto& d : dirs) {
          int nb[3] = {x, y, z};
          nb[d.axis] += d.sign;
          if (occ(nb[0], nb[1], nb[2])) continue;
          for (int a = 0; a < split; ++a)
            for (int b = 0; b < split; ++b) {
              auto corner = [&](int du, int dv) {
                long p[3] = {static_cast<long>(cell[0]) * split, static_cast<long>(cell[1]) * split,
                             static_cast<long>(cell[2]) * split};
                p[d.axis] += d.sign > 0 ? split : 0;
                p[d.u] += a + du;
                p[d.v] += b + dv;
                return vertex(p[0], p[1], p[2]);
              };
              const auto c00 = corner(0, 0), c10 = corner(1, 0), c11 = corner(1, 1), c01 = corner(0, 1);
              faces.push_back({c00, c10, c11});
              faces.push_back({c00, c11, c01});
            }
        }
      }
  return TriMesh(std::move(verts), std::move(faces));
}

// 4×4×3 block with a slot cut across the top face (symmetric about x = 2).
inline TriMesh make_box_with_notch(int split = 2) {
  const int nx = 4, ny = 4, nz = 3;
  std::vector<bool> occ(static_cast<std::size_t>(nx) * ny * nz, true);
  for (int y = 0; y < ny; ++y)
    for (int x = 1; x <= 2; ++x) occ[(static_cast<std::size_t>(2) * ny + y) * nx + x] = false;
  return make_voxel_solid(nx, ny, nz, occ, split).normalized(1.0);
}

// L-shaped prism: two 4×1 arms in the xy-plane, extruded 2 cells along z.
inline TriMesh make_l_shape(int split = 2) {
  const int nx = 4, ny = 4, nz = 2;
  std::vector<bool> occ(static_cast<std::size_t>(nx) * ny * nz, false);
  for (int z = 0; z < nz; ++z) {
    for (int x = 0; x < nx; ++x) occ[(static_cast<std::size_t>(z) * ny + 0) * nx + x] = true;
    for (int y = 0; y < ny; ++y) occ[(static_cast<std::size_t>(z) * ny + y) * nx + 0] = true;
  }
  return make_voxel_solid(nx, ny, nz, occ, split).normalized(1.0);
}

inline TriMesh make_box(int split = 2) {
  std::vector<bool> occ(8, true);
  return make_voxel_solid(2, 2, 2, occ, split).normalized(1.0);
}

inline TriMesh make_sphere(int subdiv = 3) { return make_icosphere(subdiv).normalized(1.0); }

// Named procedural shapes shared by the CLI and the acceptance suite.
inline TriMesh make_procedural(const std::string& name) {
  if (name == "sphere") return make_sphere(3);
  if (name == "box-with-notch") return make_box_with_notch();
  if (name == "l-shape") return make_l_shape();
  if (name == "box") return make_box();
  fail(ErrorKind::kInvalidArgument, "unknown procedural shape '" + name + "'");
}

inline const std::vector<std::string>& procedural_names() {
  static const std::vector<std::string> names = {"sphere", "box-with-notch", "l-shape", "box"};
  return names;
}

}  // namespace pun
