#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pun/error.hpp"
#include "pun/geometry.hpp"
#include "pun/image.hpp"
#include "pun/image_metrics.hpp"
#include "pun/interpolation.hpp"

namespace pun {

// Shortest text that still carries 17 significant digits; independent of the
// process locale.
inline std::string format_real(double v, int digits = 17) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, digits);
  return std::string(buf.data(), res.ptr);
}

inline bool parse_real(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

namespace detail {

inline std::vector<double> sorted_pairwise_distances(std::span<const UnitDir> dirs) {
  std::vector<double> d;
  d.reserve(dirs.size() * (dirs.size() - 1) / 2);
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j) d.push_back(angular_distance(dirs[i], dirs[j]));
  std::sort(d.begin(), d.end());
  return d;
}

inline const std::vector<double>& canonical_pairwise_distances() {
  static const std::vector<double> d = sorted_pairwise_distances(canonical_anchors());
  return d;
}

}  // namespace detail

// True when `dirs` is a rigid rotation of the canonical anchor set, judged by
// the sorted multiset of pairwise angular distances.
inline bool is_anchor_set(std::span<const UnitDir> dirs, double tol = 1e-6) {
  if (dirs.size() != kAnchorCount) return false;
  const auto d = detail::sorted_pairwise_distances(dirs);
  const auto& c = detail::canonical_pairwise_distances();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(d[i] - c[i]) > tol) return false;
  return true;
}

// 48 per-anchor uncertainties in [0, 1] bound to world-space anchor directions.
class UMap {
 public:
  UMap(std::vector<double> values, std::vector<UnitDir> anchors_world, Viewpoint source_view, UncertaintyKind kind,
       std::size_t step_index)
      : values_(std::move(values)),
        anchors_(std::move(anchors_world)),
        source_(source_view),
        kind_(kind),
        step_(step_index) {
    if (values_.size() != kAnchorCount)
      fail(ErrorKind::kInvalidArgument, "UMap: expected 48 values, got " + std::to_string(values_.size()));
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!(values_[i] >= 0.0 && values_[i] <= 1.0))
        fail(ErrorKind::kInvalidArgument, "UMap: value " + std::to_string(i) + " = " + format_real(values_[i]) +
                                              " outside [0, 1]");
    if (anchors_.size() != kAnchorCount)
      fail(ErrorKind::kInvalidArgument, "UMap: expected 48 anchors, got " + std::to_string(anchors_.size()));
    if (!is_anchor_set(anchors_))
      fail(ErrorKind::kInvalidArgument, "UMap: anchors are not a rotation of the canonical HEALPix set");
  }

  // Values bound to anchors_for_view(source_view).
  static UMap for_view(std::vector<double> values, const Viewpoint& source_view, UncertaintyKind kind,
                       std::size_t step_index) {
    return UMap(std::move(values), anchors_for_view(source_view), source_view, kind, step_index);
  }

  std::span<const double> values() const { return values_; }
  std::span<const UnitDir> anchors_world() const { return anchors_; }
  const Viewpoint& source_view() const { return source_; }
  UncertaintyKind kind() const { return kind_; }
  std::size_t step_index() const { return step_; }

  UMap with_step(std::size_t step) const {
    UMap copy = *this;
    copy.step_ = step;
    return copy;
  }

  double interpolate(const UnitDir& dir) const { return interpolate_values(anchors_, values_, dir); }

  friend bool operator==(const UMap&, const UMap&) = default;

 private:
  std::vector<double> values_;
  std::vector<UnitDir> anchors_;
  Viewpoint source_;
  UncertaintyKind kind_;
  std::size_t step_;
};

inline std::string encode_umap(const UMap& u) {
  std::string out = "PUNUMAP 1 " + std::string(to_string(u.kind())) + " " + std::to_string(u.step_index()) + "\n";
  const auto& v = u.source_view();
  out += format_real(v.elevation_deg()) + " " + format_real(v.azimuth_deg()) + " " + format_real(v.radius()) + "\n";
  for (std::size_t i = 0; i < kAnchorCount; ++i) {
    const auto& a = u.anchors_world()[i];
    out += format_real(a.x()) + " " + format_real(a.y()) + " " + format_real(a.z()) + " " + format_real(u.values()[i]) +
           "\n";
  }
  return out;
}

inline void write_umap(const UMap& u, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  f << encode_umap(u);
  if (!f) fail(ErrorKind::kIo, "write failed: " + path.string());
}

namespace detail {
inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}
}  // namespace detail

inline UMap decode_umap(std::string_view text, const std::string& origin = "<memory>") {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  while (!lines.empty() && detail::split_ws(lines.back()).empty()) lines.pop_back();

  auto where = [&](std::size_t line, const std::string& field) {
    return origin + ":" + std::to_string(line + 1) + ": field '" + field + "'";
  };
  auto real_at = [&](std::string_view tok, std::size_t line, const std::string& field) {
    double v = 0.0;
    if (!parse_real(tok, v) || !std::isfinite(v))
      fail(ErrorKind::kFormat, where(line, field) + ": not a finite real: '" + std::string(tok) + "'");
    return v;
  };

  if (lines.size() < 2) fail(ErrorKind::kFormat, origin + ": missing header or source viewpoint line");
  const auto header = detail::split_ws(lines[0]);
  if (header.size() != 4 || header[0] != "PUNUMAP") fail(ErrorKind::kFormat, where(0, "header") + ": expected 'PUNUMAP 1 <kind> <step>'");
  if (header[1] != "1") fail(ErrorKind::kFormat, where(0, "version") + ": unsupported version '" + std::string(header[1]) + "'");
  UncertaintyKind kind;
  try {
    kind = parse_uncertainty_kind(header[2]);
  } catch (const Error&) {
    fail(ErrorKind::kFormat, where(0, "kind") + ": unknown kind '" + std::string(header[2]) + "'");
  }
  std::size_t step = 0;
  {
    auto res = std::from_chars(header[3].data(), header[3].data() + header[3].size(), step);
    if (res.ec != std::errc() || res.ptr != header[3].data() + header[3].size())
      fail(ErrorKind::kFormat, where(0, "step_index") + ": not a non-negative integer");
  }

  const auto src = detail::split_ws(lines[1]);
  if (src.size() != 3) fail(ErrorKind::kFormat, where(1, "source_view") + ": expected '<elev> <azim> <radius>'");
  const double elev = real_at(src[0], 1, "elevation");
  const double azim = real_at(src[1], 1, "azimuth");
  const double radius = real_at(src[2], 1, "radius");
  if (elev < 0.0 || elev > 180.0 || radius <= 0.0)
    fail(ErrorKind::kFormat, where(1, "source_view") + ": elevation or radius out of range");

  const std::size_t count = lines.size() - 2;
  if (count != kAnchorCount)
    fail(ErrorKind::kFormat, origin + ": field 'values': expected 48 rows, got " + std::to_string(count));

  std::vector<double> values;
  std::vector<UnitDir> anchors;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto tok = detail::split_ws(lines[i]);
    if (tok.size() != 4) fail(ErrorKind::kFormat, where(i, "anchor") + ": expected 4 reals, got " + std::to_string(tok.size()));
    const double x = real_at(tok[0], i, "anchor_x"), y = real_at(tok[1], i, "anchor_y"), z = real_at(tok[2], i, "anchor_z");
    const double v = real_at(tok[3], i, "value");
    if (v < 0.0 || v > 1.0) fail(ErrorKind::kFormat, where(i, "value") + ": " + std::string(tok[3]) + " outside [0, 1]");
    const double n = std::sqrt(x * x + y * y + z * z);
    if (std::abs(n - 1.0) > 1e-9) fail(ErrorKind::kFormat, where(i, "anchor") + ": not unit length");
    // Bit-exact: stored components are already normalized to within 1e-9,
    // normalizing again could move the last bits.
    anchors.emplace_back(x, y, z);
    values.push_back(v);
  }
  try {
    return UMap(std::move(values), std::move(anchors), Viewpoint(elev, azim, radius), kind, step);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, origin + ": " + e.what());
  }
}

inline UMap read_umap(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open UMap file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_umap(ss.str(), path.string());
}

// Sequential colormap from dark purple through teal to yellow.
inline std::array<double, 3> colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 6> kStops = {{
      {0.267, 0.005, 0.329},
      {0.254, 0.265, 0.530},
      {0.164, 0.471, 0.558},
      {0.135, 0.659, 0.518},
      {0.478, 0.821, 0.318},
      {0.993, 0.906, 0.144},
  }};
  t = std::clamp(t, 0.0, 1.0) * (kStops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), kStops.size() - 2);
  const double f = t - static_cast<double>(i);
  return {kStops[i][0] + f * (kStops[i + 1][0] - kStops[i][0]), kStops[i][1] + f * (kStops[i + 1][1] - kStops[i][1]),
          kStops[i][2] + f * (kStops[i + 1][2] - kStops[i][2])};
}

struct PolarLayout {
  double cx = 0.0;
  double cy = 0.0;
  double rim = 0.0;
  double disk_radius = 0.0;
};

inline PolarLayout polar_layout(int size_px) {
  const double half = size_px / 2.0;
  return {half, half, half - 2.0, std::max(3.0, size_px / 48.0)};
}

// Pixel position of a world direction on the polar plot of `source`:
// radius grows linearly with elevation measured from the view axis, angle is
// the azimuth in the view frame (x right, y up on screen).
inline std::array<double, 2> polar_position(const ViewFrame& frame, const UnitDir& dir, const PolarLayout& layout) {
  const Vec3 l = frame.to_local(dir.vec());
  const double elev = std::atan2(std::hypot(l.x(), l.y()), l.z());
  const double az = std::atan2(l.y(), l.x());
  const double r = elev / kPi * layout.rim;
  return {layout.cx + r * std::cos(az), layout.cy - r * std::sin(az)};
}

inline Image render_polar_map(const UMap& umap, int size_px) {
  require(size_px >= 64, "render_polar_map: size must be at least 64 px");
  const auto layout = polar_layout(size_px);
  const ViewFrame frame = view_frame(umap.source_view().direction());
  const auto vals = umap.values();
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  auto norm = [&](double v) { return span > 0.0 ? (v - lo) / span : 0.0; };

  Image img(size_px, size_px, 3, 1.0);
  for (int y = 0; y < size_px; ++y)
    for (int x = 0; x < size_px; ++x) {
      const double dx = x + 0.5 - layout.cx, dy = layout.cy - (y + 0.5);
      const double r = std::hypot(dx, dy);
      if (r > layout.rim) continue;
      const double elev = r / layout.rim * kPi;
      const double az = std::atan2(dy, dx);
      const Vec3 local(std::sin(elev) * std::cos(az), std::sin(elev) * std::sin(az), std::cos(elev));
      const auto c = colormap(norm(umap.interpolate(UnitDir(frame.to_world(local)))));
      img.set_pixel(x, y, c[0], c[1], c[2]);
    }
  // Rim outline in mid gray so it never merges with the black disk borders.
  for (int y = 0; y < size_px; ++y)
    for (int x = 0; x < size_px; ++x) {
      const double r = std::hypot(x + 0.5 - layout.cx, layout.cy - (y + 0.5));
      if (r > layout.rim && r <= layout.rim + 1.0) img.set_pixel(x, y, 0.5, 0.5, 0.5);
    }
  // Anchor disks: filled with the anchor's colour, 1 px black border.
  for (std::size_t i = 0; i < kAnchorCount; ++i) {
    const auto p = polar_position(frame, umap.anchors_world()[i], layout);
    const auto c = colormap(norm(vals[i]));
    const double rd = layout.disk_radius;
    const int x0 = static_cast<int>(std::floor(p[0] - rd - 1)), x1 = static_cast<int>(std::ceil(p[0] + rd + 1));
    const int y0 = static_cast<int>(std::floor(p[1] - rd - 1)), y1 = static_cast<int>(std::ceil(p[1] + rd + 1));
    for (int y = std::max(0, y0); y <= std::min(size_px - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(size_px - 1, x1); ++x) {
        const double d = std::hypot(x + 0.5 - p[0], y + 0.5 - p[1]);
        if (d <= rd - 1.0)
          img.set_pixel(x, y, c[0], c[1], c[2]);
        else if (d <= rd)
          img.set_pixel(x, y, 0.0, 0.0, 0.0);
      }
  }
  return img;
}

}  // namespace pun
