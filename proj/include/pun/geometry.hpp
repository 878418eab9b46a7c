#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "pun/error.hpp"
#include "pun/random.hpp"

namespace pun {

using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDefaultRadius = 2.73;
inline constexpr int kAnchorNSide = 2;
inline constexpr std::size_t kAnchorCount = 48;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Unit-length direction. Construction normalizes; zero-length input is rejected.
class UnitDir {
 public:
  UnitDir() : v_(0.0, 0.0, 1.0) {}
  UnitDir(double x, double y, double z) : UnitDir(Vec3(x, y, z)) {}
  explicit UnitDir(const Vec3& v) {
    const double n = v.norm();
    require(std::isfinite(n) && n > 1e-300, "UnitDir: zero or non-finite vector");
    // Already-unit input is kept verbatim so serialized directions round-trip bit-exactly.
    v_ = std::abs(n - 1.0) <= 1e-12 ? v : Vec3(v / n);
  }

  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  const Vec3& vec() const { return v_; }
  double dot(const UnitDir& o) const { return v_.dot(o.v_); }
  UnitDir operator-() const { return UnitDir(-v_); }

  friend bool operator==(const UnitDir& a, const UnitDir& b) { return a.v_ == b.v_; }

 private:
  Vec3 v_;
};

// Camera position on a sphere centred at the origin, looking at the origin.
// Elevation is the polar angle from +z (0 = north pole), azimuth is measured
// from +x towards +y.
class Viewpoint {
 public:
  Viewpoint() = default;
  Viewpoint(double elevation_deg, double azimuth_deg, double radius = kDefaultRadius)
      : elevation_deg_(elevation_deg), azimuth_deg_(normalize_azimuth(azimuth_deg)), radius_(radius) {
    require(std::isfinite(elevation_deg) && elevation_deg >= 0.0 && elevation_deg <= 180.0,
            "Viewpoint: elevation must lie in [0, 180] degrees");
    require(std::isfinite(radius) && radius > 0.0, "Viewpoint: radius must be positive");
  }

  static Viewpoint from_direction(const UnitDir& d, double radius = kDefaultRadius) {
    const double elev = rad2deg(std::atan2(std::hypot(d.x(), d.y()), d.z()));
    const double azim = rad2deg(std::atan2(d.y(), d.x()));
    return Viewpoint(std::clamp(elev, 0.0, 180.0), azim, radius);
  }

  double elevation_deg() const { return elevation_deg_; }
  double azimuth_deg() const { return azimuth_deg_; }
  double radius() const { return radius_; }

  UnitDir direction() const {
    const double t = deg2rad(elevation_deg_);
    const double p = deg2rad(azimuth_deg_);
    return UnitDir(std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t));
  }

  Vec3 position() const { return radius_ * direction().vec(); }

  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;

 private:
  static double normalize_azimuth(double a) {
    require(std::isfinite(a), "Viewpoint: azimuth must be finite");
    double r = std::fmod(a, 360.0);
    if (r < 0.0) r += 360.0;
    if (r >= 360.0) r = 0.0;
    return r;
  }

  double elevation_deg_ = 0.0;
  double azimuth_deg_ = 0.0;
  double radius_ = kDefaultRadius;
};

// Right-handed orthonormal basis; forward points from the origin to the camera.
struct ViewFrame {
  UnitDir right;
  UnitDir up;
  UnitDir forward;

  // Maps frame-local coordinates to world coordinates.
  Eigen::Matrix3d rotation() const {
    Eigen::Matrix3d r;
    r.col(0) = right.vec();
    r.col(1) = up.vec();
    r.col(2) = forward.vec();
    return r;
  }

  Vec3 to_world(const Vec3& local) const { return rotation() * local; }
  Vec3 to_local(const Vec3& world) const { return rotation().transpose() * world; }
};

inline double angular_distance(const UnitDir& a, const UnitDir& b) {
  return std::atan2(a.vec().cross(b.vec()).norm(), a.vec().dot(b.vec()));
}

inline ViewFrame view_frame(const UnitDir& view_dir) {
  const Vec3 f = view_dir.vec();
  Vec3 seed(0.0, 0.0, 1.0);
  if (std::abs(f.dot(seed)) > 1.0 - 1e-6) seed = Vec3(0.0, 1.0, 0.0);
  const Vec3 up = (seed - seed.dot(f) * f).normalized();
  const Vec3 right = up.cross(f).normalized();
  // Re-derive up so the triple is orthonormal to machine precision.
  const Vec3 up2 = f.cross(right).normalized();
  return ViewFrame{UnitDir(right), UnitDir(up2), view_dir};
}

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// HEALPix pixel centres in RING order: ring by ring from the north pole,
// increasing azimuth within each ring.
inline std::vector<UnitDir> healpix_anchor_dirs(int n_side) {
  if (!is_power_of_two(n_side)) fail(ErrorKind::kInvalidArgument, "healpix: n_side must be a power of two");
  const double n = n_side;
  std::vector<UnitDir> out;
  out.reserve(static_cast<std::size_t>(12 * n_side * n_side));
  auto emit = [&](double z, double phi) {
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.emplace_back(s * std::cos(phi), s * std::sin(phi), z);
  };
  // North polar cap.
  for (int i = 1; i < n_side; ++i) {
    const double z = 1.0 - (i * i) / (3.0 * n * n);
    for (int j = 1; j <= 4 * i; ++j) emit(z, kPi / (2.0 * i) * (j - 0.5));
  }
  // Equatorial belt.
  for (int i = n_side; i <= 3 * n_side; ++i) {
    const double z = 4.0 / 3.0 - 2.0 * i / (3.0 * n);
    const int shift = (i - n_side + 1) % 2;
    for (int j = 1; j <= 4 * n_side; ++j) emit(z, kPi / (2.0 * n) * (j - shift / 2.0));
  }
  // South polar cap, mirrored.
  for (int i = n_side - 1; i >= 1; --i) {
    const double z = -(1.0 - (i * i) / (3.0 * n * n));
    for (int j = 1; j <= 4 * i; ++j) emit(z, kPi / (2.0 * i) * (j - 0.5));
  }
  return out;
}

inline const std::vector<UnitDir>& canonical_anchors() {
  static const std::vector<UnitDir> anchors = healpix_anchor_dirs(kAnchorNSide);
  return anchors;
}

// The canonical anchor set expressed relative to `view`: local +z maps onto
// the view's forward axis through view_frame.
inline std::vector<UnitDir> anchors_for_view(const Viewpoint& view, int n_side = kAnchorNSide) {
  const ViewFrame frame = view_frame(view.direction());
  const Eigen::Matrix3d rot = frame.rotation();
  const auto& canon = n_side == kAnchorNSide ? canonical_anchors() : healpix_anchor_dirs(n_side);
  std::vector<UnitDir> out;
  out.reserve(canon.size());
  for (const auto& a : canon) out.emplace_back(rot * a.vec());
  return out;
}

// Area-uniform sample: cos(elevation) uniform in [-1, 1], azimuth uniform.
inline Viewpoint sample_uniform_viewpoint(Rng& rng, double radius) {
  const double z = rng.uniform(-1.0, 1.0);
  const double az = rng.uniform(0.0, 360.0);
  return Viewpoint(rad2deg(std::acos(std::clamp(z, -1.0, 1.0))), az, radius);
}

inline std::vector<Viewpoint> sample_candidates(std::size_t n, std::uint64_t seed, double radius = kDefaultRadius) {
  require(n >= 1, "sample_candidates: n must be at least 1");
  Rng rng(seed);
  std::vector<Viewpoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_uniform_viewpoint(rng, radius));
  return out;
}

// Fibonacci lattice of `n` near-uniform directions, rotated about z by `spin`.
inline std::vector<UnitDir> fibonacci_dirs(std::size_t n, double spin = 0.0) {
  std::vector<UnitDir> out;
  out.reserve(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i) + spin;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

}  // namespace pun
