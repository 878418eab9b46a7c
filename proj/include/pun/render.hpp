#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pun/bvh.hpp"
#include "pun/geometry.hpp"
#include "pun/image.hpp"
#include "pun/mesh.hpp"

namespace pun {

inline constexpr double kDefaultFovDeg = 50.0;
inline constexpr double kAmbient = 0.2;
inline constexpr double kAlbedo = 0.7;
inline constexpr double kBackground = 1.0;
inline constexpr double kSilhouetteThreshold = 0.999;

// Pinhole camera on the viewing sphere, looking at the origin along -forward.
struct CameraPose {
  Vec3 position;
  ViewFrame frame;
  double fov_deg = kDefaultFovDeg;
  int resolution = 128;

  static CameraPose look_at_origin(const UnitDir& dir, double radius, int resolution, double fov_deg = kDefaultFovDeg) {
    require(fov_deg > 10.0 && fov_deg < 120.0, "CameraPose: fov must lie in (10, 120) degrees");
    require(resolution >= 1, "CameraPose: resolution must be positive");
    require(radius > 0.0, "CameraPose: radius must be positive");
    return CameraPose{radius * dir.vec(), view_frame(dir), fov_deg, resolution};
  }

  static CameraPose from_viewpoint(const Viewpoint& v, int resolution, double fov_deg = kDefaultFovDeg) {
    return look_at_origin(v.direction(), v.radius(), resolution, fov_deg);
  }

  double tan_half_fov() const { return std::tan(deg2rad(fov_deg) / 2.0); }

  // Unnormalized primary ray direction through the centre of pixel (px, py).
  Vec3 pixel_dir(int px, int py) const {
    const double th = tan_half_fov();
    const double sx = ((px + 0.5) / resolution * 2.0 - 1.0) * th;
    const double sy = (1.0 - (py + 0.5) / resolution * 2.0) * th;
    return -frame.forward.vec() + sx * frame.right.vec() + sy * frame.up.vec();
  }

  struct Projection {
    double px = 0.0;  // continuous pixel coordinates; pixel (i, j) spans [i, i+1) × [j, j+1)
    double py = 0.0;
    double depth = 0.0;  // distance along the viewing axis
  };

  Projection project(const Vec3& p) const {
    const Vec3 d = p - position;
    const double depth = -d.dot(frame.forward.vec());
    const double th = tan_half_fov();
    const double sx = d.dot(frame.right.vec()) / (depth * th);
    const double sy = d.dot(frame.up.vec()) / (depth * th);
    return {(sx + 1.0) / 2.0 * resolution, (1.0 - sy) / 2.0 * resolution, depth};
  }

  // Pixels per scene unit at the given depth.
  double pixels_per_unit(double depth) const { return resolution / (2.0 * depth * tan_half_fov()); }
};

// Ambient plus Lambert term for a light along the camera's forward axis.
inline double shading_factor(const Vec3& normal, const CameraPose& pose) {
  const double lambert = std::max(0.0, normal.dot(pose.frame.forward.vec()));
  return kAmbient + (1.0 - kAmbient) * lambert;
}

inline double shade(const Vec3& normal, const CameraPose& pose) {
  return std::clamp(kAlbedo * shading_factor(normal, pose), 0.0, 1.0);
}

inline Image render_view(const Bvh& bvh, const CameraPose& pose) {
  require(pose.resolution >= 32, "render_view: resolution must be at least 32");
  const int n = pose.resolution;
  std::vector<double> data(static_cast<std::size_t>(n) * n * 3, kBackground);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto hit = bvh.intersect(Ray{pose.position, pose.pixel_dir(x, y)});
      if (!hit) continue;
      const double s = shade(bvh.mesh().normal(hit->face), pose);
      const std::size_t i = (static_cast<std::size_t>(y) * n + x) * 3;
      data[i] = data[i + 1] = data[i + 2] = s;
    }
  return Image(n, n, 3, std::move(data));
}

inline Image render_view(const TriMesh& mesh, const CameraPose& pose) { return render_view(Bvh(mesh), pose); }

// Foreground mask: luminance strictly below the white-background threshold.
inline std::vector<bool> silhouette(const Image& img) {
  std::vector<bool> mask(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      mask[static_cast<std::size_t>(y) * img.width() + x] = img.luminance(x, y) < kSilhouetteThreshold;
  return mask;
}

inline std::size_t count_true(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

}  // namespace pun
