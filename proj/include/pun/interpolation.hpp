#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "pun/geometry.hpp"

namespace pun {

// Anchors closer than this (inclusive) to a query direction take part in the
// softmax blend.
inline constexpr double kNeighborRadiusRad = kPi / 6.0;

struct AnchorWeight {
  std::size_t anchor = 0;
  double theta = 0.0;  // radians
  double weight = 0.0;
};

// Softmax over negative angular distance (radians) of the anchors within
// kNeighborRadiusRad of `query`. Falls back to the single nearest anchor when
// none is in range.
inline std::vector<AnchorWeight> interpolation_weights(std::span<const UnitDir> anchors, const UnitDir& query,
                                                       double radius_rad = kNeighborRadiusRad) {
  std::vector<AnchorWeight> out;
  const double cos_cut = std::cos(radius_rad) - 1e-9;
  double best_dot = -2.0;
  std::size_t best = 0;
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    const double d = anchors[j].dot(query);
    if (d > best_dot) {
      best_dot = d;
      best = j;
    }
    if (d < cos_cut) continue;
    const double theta = angular_distance(anchors[j], query);
    if (theta <= radius_rad) out.push_back({j, theta, 0.0});
  }
  if (out.empty()) {
    out.push_back({best, angular_distance(anchors[best], query), 1.0});
    return out;
  }
  double theta_min = std::numeric_limits<double>::infinity();
  for (const auto& w : out) theta_min = std::min(theta_min, w.theta);
  double sum = 0.0;
  for (auto& w : out) {
    w.weight = std::exp(-(w.theta - theta_min));
    sum += w.weight;
  }
  for (auto& w : out) w.weight /= sum;
  return out;
}

inline double interpolate_values(std::span<const UnitDir> anchors, std::span<const double> values,
                                 const UnitDir& query) {
  double acc = 0.0;
  for (const auto& w : interpolation_weights(anchors, query)) acc += w.weight * values[w.anchor];
  return std::clamp(acc, 0.0, 1.0);
}

}  // namespace pun
