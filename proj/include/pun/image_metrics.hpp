#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "pun/error.hpp"
#include "pun/image.hpp"

namespace pun {

enum class UncertaintyKind { kPsnr, kSsim, kMse, kLpipsReserved };

inline std::string_view to_string(UncertaintyKind k) {
  switch (k) {
    case UncertaintyKind::kPsnr: return "psnr";
    case UncertaintyKind::kSsim: return "ssim";
    case UncertaintyKind::kMse: return "mse";
    case UncertaintyKind::kLpipsReserved: return "lpips";
  }
  return "?";
}

inline UncertaintyKind parse_uncertainty_kind(std::string_view s) {
  if (s == "psnr") return UncertaintyKind::kPsnr;
  if (s == "ssim") return UncertaintyKind::kSsim;
  if (s == "mse") return UncertaintyKind::kMse;
  if (s == "lpips") return UncertaintyKind::kLpipsReserved;
  fail(ErrorKind::kFormat, "unknown uncertainty kind '" + std::string(s) + "'");
}

inline void require_computable(UncertaintyKind k) {
  if (k == UncertaintyKind::kLpipsReserved)
    fail(ErrorKind::kUnsupportedKind, "lpips uncertainty is reserved and cannot be computed");
}

namespace detail {
inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::kInvalidArgument, std::string(what) + ": image shapes differ");
}
}  // namespace detail

inline double mse(const Image& a, const Image& b) {
  detail::require_same_shape(a, b, "mse");
  require(!a.empty(), "mse: empty image");
  const auto da = a.data();
  const auto db = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    sum += d * d;
  }
  return sum / static_cast<double>(da.size());
}

inline constexpr double kPsnrIdenticalCap = 100.0;
inline constexpr double kPsnrUncertaintyCap = 50.0;

inline double psnr_from_mse(double m) {
  if (m < 1e-10) return kPsnrIdenticalCap;
  return 10.0 * std::log10(1.0 / m);
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean SSIM over all fully-contained Gaussian windows, averaged over channels.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  detail::require_same_shape(a, b, "ssim");
  if (std::min(a.width(), a.height()) < p.window)
    fail(ErrorKind::kInvalidArgument, "ssim: image smaller than the " + std::to_string(p.window) + "px window");

  std::vector<double> kernel(static_cast<std::size_t>(p.window));
  const int half = p.window / 2;
  double ksum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    const double x = i - half;
    kernel[i] = std::exp(-(x * x) / (2.0 * p.sigma * p.sigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = a.width(), h = a.height();
  const int ow = w - p.window + 1, oh = h - p.window + 1;
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);

  // Separable valid-mode filter: rows first, then columns.
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += kernel[k] * src[static_cast<std::size_t>(y) * w + x + k];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int k = 0; k < p.window; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };

  double total = 0.0;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        const std::size_t idx = static_cast<std::size_t>(j) * w + i;
        x[idx] = a.at(i, j, c);
        y[idx] = b.at(i, j, c);
        xx[idx] = x[idx] * x[idx];
        yy[idx] = y[idx] * y[idx];
        xy[idx] = x[idx] * y[idx];
      }
    const auto mx = filter(x), my = filter(y), mxx = filter(xx), myy = filter(yy), mxy = filter(xy);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cov = mxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / a.channels();
}

// Maps a raw metric value onto a common scale where 0 is a perfect
// reconstruction and 1 is the worst representable one.
inline double to_uncertainty(double value, UncertaintyKind kind) {
  require_computable(kind);
  switch (kind) {
    case UncertaintyKind::kPsnr:
      return std::clamp(1.0 - std::min(value, kPsnrUncertaintyCap) / kPsnrUncertaintyCap, 0.0, 1.0);
    case UncertaintyKind::kSsim:
      return std::clamp(1.0 - value, 0.0, 1.0);
    case UncertaintyKind::kMse:
      return std::clamp(value, 0.0, 1.0);
    case UncertaintyKind::kLpipsReserved:
      break;
  }
  fail(ErrorKind::kUnsupportedKind, "unreachable uncertainty kind");
}

inline double metric_value(const Image& reference, const Image& synthesized, UncertaintyKind kind) {
  require_computable(kind);
  switch (kind) {
    case UncertaintyKind::kPsnr: return psnr(reference, synthesized);
    case UncertaintyKind::kSsim: return ssim(reference, synthesized);
    case UncertaintyKind::kMse: return mse(reference, synthesized);
    case UncertaintyKind::kLpipsReserved: break;
  }
  fail(ErrorKind::kUnsupportedKind, "unreachable uncertainty kind");
}

}  // namespace pun
