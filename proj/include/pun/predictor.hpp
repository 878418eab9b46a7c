#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pun/image.hpp"
#include "pun/manifest.hpp"
#include "pun/simulator.hpp"
#include "pun/uncertainty_map.hpp"

namespace pun {

struct PredictRequest {
  Viewpoint view;
  UncertaintyKind kind = UncertaintyKind::kPsnr;
  const Image* image = nullptr;    // the input view, when the caller has rendered it
  std::filesystem::path image_path;  // the same image on disk, for out-of-process predictors
};

// Maps one input view to a UMap bound to anchors_for_view(view). The step
// index of the result is left at 0 for the caller to assign.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual bool needs_image() const { return false; }
  virtual bool needs_image_file() const { return false; }
  virtual UMap predict(const PredictRequest& req) = 0;
};

class SimulatorOracle : public Predictor {
 public:
  SimulatorOracle(Scene scene, SimConfig cfg) : scene_(std::move(scene)), cfg_(cfg) {}

  std::string name() const override { return "sim"; }
  UMap predict(const PredictRequest& req) override { return make_umap(scene_, req.view, req.kind, cfg_); }

 private:
  Scene scene_;
  SimConfig cfg_;
};

inline constexpr double kDatasetMatchTolRad = 1e-6;

// Serves the UMaps stored for one dataset instance. With `nearest` set, a
// query missing from the dataset gets the values of the closest stored view,
// re-bound to the query's own anchors.
class DatasetOracle : public Predictor {
 public:
  struct Entry {
    Viewpoint view;
    UMap umap;
  };

  DatasetOracle(const DatasetManifest& m, const std::string& instance_id, UncertaintyKind kind, bool nearest = false)
      : kind_(kind), nearest_(nearest) {
    require_computable(kind);
    const InstanceRecord* inst = nullptr;
    if (instance_id.empty()) {
      if (m.instances.empty()) fail(ErrorKind::kNotFound, "DatasetOracle: the manifest holds no instances");
      require(m.instances.size() == 1, "DatasetOracle: the manifest holds several instances; name one");
      inst = &m.instances.front();
    } else {
      for (const auto& i : m.instances)
        if (i.instance_id == instance_id) inst = &i;
      if (!inst) fail(ErrorKind::kNotFound, "DatasetOracle: no instance '" + instance_id + "' in the manifest");
    }
    const std::string key(to_string(kind));
    for (const auto& rec : inst->views) {
      const auto it = rec.umap_paths.find(key);
      if (it == rec.umap_paths.end()) continue;
      entries_.push_back({rec.viewpoint, read_umap(m.resolve(it->second))});
    }
    if (entries_.empty())
      fail(ErrorKind::kNotFound, "DatasetOracle: instance '" + inst->instance_id + "' has no " + key + " UMaps");
  }

  std::string name() const override { return "dataset"; }
  const std::vector<Entry>& entries() const { return entries_; }

  UMap predict(const PredictRequest& req) override {
    if (req.kind != kind_)
      fail(ErrorKind::kUnsupportedKind, "DatasetOracle: loaded " + std::string(to_string(kind_)) + ", asked for " +
                                            std::string(to_string(req.kind)));
    const UnitDir q = req.view.direction();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const double d = angular_distance(entries_[i].view.direction(), q);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best_d <= kDatasetMatchTolRad) return entries_[best].umap;
    if (!nearest_)
      fail(ErrorKind::kNotFound, "DatasetOracle: no stored view within 1e-6 rad of (" +
                                     format_real(req.view.elevation_deg()) + ", " +
                                     format_real(req.view.azimuth_deg()) + ")");
    const auto v = entries_[best].umap.values();
    return UMap::for_view(std::vector<double>(v.begin(), v.end()), req.view, kind_, 0);
  }

 private:
  UncertaintyKind kind_;
  bool nearest_;
  std::vector<Entry> entries_;
};

inline constexpr int kFeatureSide = 16;
inline constexpr std::size_t kFeatureDim = kFeatureSide * kFeatureSide;
inline constexpr double kKnnEpsilon = 1e-8;

// Luminance box-filtered to 16x16 (exact area weights), then mean-centred.
inline std::vector<double> image_features(const Image& img) {
  require(img.width() >= kFeatureSide && img.height() >= kFeatureSide, "image_features: image smaller than 16x16");
  std::vector<double> f(kFeatureDim, 0.0);
  const double sx = static_cast<double>(img.width()) / kFeatureSide;
  const double sy = static_cast<double>(img.height()) / kFeatureSide;
  for (int oy = 0; oy < kFeatureSide; ++oy)
    for (int ox = 0; ox < kFeatureSide; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx, y0 = oy * sy, y1 = (oy + 1) * sy;
      double acc = 0.0;
      for (int y = static_cast<int>(y0); y < std::min<double>(img.height(), std::ceil(y1)); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(x0); x < std::min<double>(img.width(), std::ceil(x1)); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          acc += wx * wy * img.luminance(x, y);
        }
      }
      f[static_cast<std::size_t>(oy) * kFeatureSide + ox] = acc / (sx * sy);
    }
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(kFeatureDim);
  for (auto& v : f) v -= mean;
  return f;
}

struct KnnModel {
  int k = 3;
  UncertaintyKind kind = UncertaintyKind::kPsnr;
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> values;
  std::vector<Viewpoint> views;

  std::size_t rows() const { return features.size(); }
  friend bool operator==(const KnnModel&, const KnnModel&) = default;
};

inline constexpr int kKnnFormatVersion = 1;

inline KnnModel knn_fit(const DatasetManifest& m, int k, UncertaintyKind kind) {
  require(k >= 1, "knn_fit: k must be at least 1");
  require_computable(kind);
  KnnModel model;
  model.k = k;
  model.kind = kind;
  const std::string key(to_string(kind));
  for (const auto& inst : m.instances)
    for (const auto& rec : inst.views) {
      const auto it = rec.umap_paths.find(key);
      if (it == rec.umap_paths.end()) continue;
      const UMap u = read_umap(m.resolve(it->second));
      model.features.push_back(image_features(read_pnm(m.resolve(rec.image_path))));
      model.values.emplace_back(u.values().begin(), u.values().end());
      model.views.push_back(rec.viewpoint);
    }
  require(model.rows() >= static_cast<std::size_t>(k), "knn_fit: " + std::to_string(model.rows()) + " " + key +
                                                           " records, fewer than k = " + std::to_string(k));
  return model;
}

// Neighbour rows of `features` in order of distance, ties by row index.
inline std::vector<std::pair<std::size_t, double>> knn_neighbors(const KnnModel& model,
                                                                 const std::vector<double>& features) {
  std::vector<std::pair<std::size_t, double>> d;
  d.reserve(model.rows());
  for (std::size_t r = 0; r < model.rows(); ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      const double t = model.features[r][i] - features[i];
      s += t * t;
    }
    d.emplace_back(r, std::sqrt(s));
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(model.k), d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(),
                    [](const auto& a, const auto& b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
  d.resize(k);
  return d;
}

// Inverse-distance weights over the k nearest rows.
inline std::vector<double> knn_predict(const KnnModel& model, const Image& image) {
  require(model.rows() > 0, "knn_predict: empty model");
  const auto nn = knn_neighbors(model, image_features(image));
  std::vector<double> w;
  double sum = 0.0;
  for (const auto& [row, dist] : nn) sum += w.emplace_back(1.0 / (dist + kKnnEpsilon));
  std::vector<double> out(kAnchorCount, 0.0);
  for (std::size_t i = 0; i < nn.size(); ++i)
    for (std::size_t a = 0; a < kAnchorCount; ++a) out[a] += w[i] / sum * model.values[nn[i].first][a];
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline nlohmann::ordered_json knn_to_json(const KnnModel& m) {
  nlohmann::ordered_json j;
  j["format_version"] = kKnnFormatVersion;
  j["k"] = m.k;
  j["kind"] = std::string(to_string(m.kind));
  j["feature_dim"] = kFeatureDim;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r)
    rows.push_back({{"viewpoint", viewpoint_to_json(m.views[r])}, {"features", m.features[r]}, {"values", m.values[r]}});
  return j;
}

inline KnnModel knn_from_json(const nlohmann::json& j, const std::string& origin) {
  try {
    if (j.at("format_version").get<int>() != kKnnFormatVersion)
      fail(ErrorKind::kVersion, origin + ": unsupported model version " + j.at("format_version").dump());
    KnnModel m;
    m.k = j.at("k").get<int>();
    m.kind = parse_uncertainty_kind(j.at("kind").get<std::string>());
    const auto dim = j.at("feature_dim").get<std::size_t>();
    if (dim != kFeatureDim) fail(ErrorKind::kFormat, origin + ": feature_dim " + std::to_string(dim) + ", expected 256");
    if (m.k < 1) fail(ErrorKind::kFormat, origin + ": k must be at least 1");
    const nlohmann::json rows = j.at("rows");
    for (const auto& r : rows) {
      auto f = r.at("features").get<std::vector<double>>();
      auto v = r.at("values").get<std::vector<double>>();
      if (f.size() != kFeatureDim || v.size() != kAnchorCount)
        fail(ErrorKind::kFormat, origin + ": row " + std::to_string(m.rows()) + " has the wrong width");
      for (double x : f)
        if (!std::isfinite(x)) fail(ErrorKind::kFormat, origin + ": non-finite feature");
      for (double x : v)
        if (!(x >= 0.0 && x <= 1.0)) fail(ErrorKind::kFormat, origin + ": value outside [0, 1]");
      m.features.push_back(std::move(f));
      m.values.push_back(std::move(v));
      m.views.push_back(viewpoint_from_json(r.at("viewpoint")));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, origin + ": " + e.what());
  }
}

inline void save_knn(const KnnModel& m, const std::filesystem::path& path) {
  write_text_file(path, knn_to_json(m).dump(1) + "\n");
}

inline KnnModel load_knn(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
  return knn_from_json(j, path.string());
}

class KnnRegressor : public Predictor {
 public:
  explicit KnnRegressor(KnnModel model) : model_(std::move(model)) {}

  std::string name() const override { return "knn"; }
  bool needs_image() const override { return true; }

  UMap predict(const PredictRequest& req) override {
    require(req.image != nullptr, "KnnRegressor: no input image");
    if (req.kind != model_.kind)
      fail(ErrorKind::kUnsupportedKind, "KnnRegressor: model holds " + std::string(to_string(model_.kind)) +
                                            ", asked for " + std::string(to_string(req.kind)));
    return UMap::for_view(knn_predict(model_, *req.image), req.view, req.kind, 0);
  }

  const KnnModel& model() const { return model_; }

 private:
  KnnModel model_;
};

}  // namespace pun
