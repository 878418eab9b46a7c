#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pun/geometry.hpp"
#include "pun/manifest.hpp"
#include "pun/predictor.hpp"
#include "pun/random.hpp"
#include "pun/uncertainty_map.hpp"

namespace pun {

// Shortest decimal that reads back to the same double, for flag text.
inline std::string format_shortest(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

struct FilterPolicy {
  enum class Kind { kSmallThreshold, kDisable, kTop, kSingleAngular };
  Kind kind = Kind::kSmallThreshold;
  double threshold = 0.1;
  int count = 32;
  double min_sep_deg = 5.0;

  static FilterPolicy small(double t = 0.1) {
    require(t > 0.0 && t < 1.0, "filter: threshold must lie in (0, 1)");
    return {Kind::kSmallThreshold, t, 32, 5.0};
  }
  static FilterPolicy disable() { return {Kind::kDisable, 0.1, 32, 5.0}; }
  static FilterPolicy top(int n = 32) {
    require(n >= 1, "filter: count must be at least 1");
    return {Kind::kTop, 0.1, n, 5.0};
  }
  static FilterPolicy single(double deg = 5.0) {
    require(deg > 0.0, "filter: angular separation must be positive");
    return {Kind::kSingleAngular, 0.1, 32, deg};
  }

  std::string flag() const {
    switch (kind) {
      case Kind::kSmallThreshold: return "small:" + format_shortest(threshold);
      case Kind::kDisable: return "disable";
      case Kind::kTop: return "top32:" + std::to_string(count);
      case Kind::kSingleAngular: return "single:" + format_shortest(min_sep_deg);
    }
    return "";
  }
};

struct AggregatePolicy {
  enum class Kind { kProductAll, kLastOnly, kNeighborDiff };
  Kind kind = Kind::kProductAll;
  double radius_deg = 5.0;

  static AggregatePolicy product() { return {Kind::kProductAll, 5.0}; }
  static AggregatePolicy last() { return {Kind::kLastOnly, 5.0}; }
  static AggregatePolicy diff(double deg = 5.0) {
    require(deg > 0.0, "agg: neighbour radius must be positive");
    return {Kind::kNeighborDiff, deg};
  }

  std::string flag() const {
    switch (kind) {
      case Kind::kProductAll: return "product";
      case Kind::kLastOnly: return "last";
      case Kind::kNeighborDiff: return "diff:" + format_shortest(radius_deg);
    }
    return "";
  }
};

namespace detail {

inline std::pair<std::string, std::optional<std::string>> split_flag(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return {s, std::nullopt};
  return {s.substr(0, colon), s.substr(colon + 1)};
}

inline double flag_real(const std::optional<std::string>& arg, double fallback, const std::string& whole) {
  if (!arg) return fallback;
  double v = 0.0;
  if (!parse_real(*arg, v)) fail(ErrorKind::kInvalidArgument, "bad number in policy '" + whole + "'");
  return v;
}

}  // namespace detail

// small[:t] | disable | top32[:n] | single[:deg]
inline FilterPolicy parse_filter(const std::string& s) {
  const auto [name, arg] = detail::split_flag(s);
  if (name == "small") return FilterPolicy::small(detail::flag_real(arg, 0.1, s));
  if (name == "disable" && !arg) return FilterPolicy::disable();
  if (name == "top32" || name == "top") {
    const double n = detail::flag_real(arg, 32, s);
    require(n == std::floor(n), "filter: count must be an integer in '" + s + "'");
    return FilterPolicy::top(static_cast<int>(n));
  }
  if (name == "single") return FilterPolicy::single(detail::flag_real(arg, 5.0, s));
  fail(ErrorKind::kInvalidArgument, "unknown filter policy '" + s + "' (small:T | disable | top32:N | single:DEG)");
}

// product | last | diff[:deg]
inline AggregatePolicy parse_aggregate(const std::string& s) {
  const auto [name, arg] = detail::split_flag(s);
  if ((name == "product" || name == "all") && !arg) return AggregatePolicy::product();
  if (name == "last" && !arg) return AggregatePolicy::last();
  if (name == "diff") return AggregatePolicy::diff(detail::flag_real(arg, 5.0, s));
  fail(ErrorKind::kInvalidArgument, "unknown aggregation policy '" + s + "' (product | last | diff:DEG)");
}

inline constexpr double kProductFloor = 1e-12;

// Candidates for one step with their interpolated value under every UMap so far.
struct CandidateSet {
  std::vector<Viewpoint> views;
  std::vector<UnitDir> dirs;
  std::vector<std::vector<double>> values;  // [candidate][step]
  std::vector<char> alive;
  bool filter_exhausted = false;

  static CandidateSet build(std::vector<Viewpoint> views, std::span<const UMap> history) {
    CandidateSet c;
    c.views = std::move(views);
    c.dirs.reserve(c.views.size());
    c.values.reserve(c.views.size());
    for (const auto& v : c.views) {
      c.dirs.push_back(v.direction());
      std::vector<double> row;
      row.reserve(history.size());
      for (const auto& u : history) row.push_back(u.interpolate(c.dirs.back()));
      c.values.push_back(std::move(row));
    }
    c.alive.assign(c.views.size(), 1);
    return c;
  }

  std::size_t size() const { return views.size(); }
  std::size_t alive_count() const { return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), 1)); }
};

struct EpisodeState {
  std::vector<UMap> history;
  std::vector<Viewpoint> selected;
  std::vector<CandidateSet> candidate_log;
  std::uint64_t seed = 0;
  int budget = 20;
};

// Marks redundant candidates dead. If none survive, all are revived and the
// set is flagged.
inline void filter_redundant(const EpisodeState& state, CandidateSet& c, const FilterPolicy& p) {
  const std::size_t n = c.size();
  c.alive.assign(n, 1);
  c.filter_exhausted = false;
  switch (p.kind) {
    case FilterPolicy::Kind::kDisable: break;
    case FilterPolicy::Kind::kSmallThreshold:
      for (std::size_t i = 0; i < n; ++i)
        for (double v : c.values[i])
          if (v < p.threshold) c.alive[i] = 0;
      break;
    case FilterPolicy::Kind::kTop: {
      const std::size_t steps = n ? c.values[0].size() : 0;
      const std::size_t kill = std::min<std::size_t>(static_cast<std::size_t>(p.count), n);
      std::vector<std::size_t> order(n);
      for (std::size_t s = 0; s < steps; ++s) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return c.values[a][s] < c.values[b][s]; });
        for (std::size_t r = 0; r < kill; ++r) c.alive[order[r]] = 0;
      }
      break;
    }
    case FilterPolicy::Kind::kSingleAngular: {
      const double sep = deg2rad(p.min_sep_deg);
      for (const auto& s : state.selected) {
        const UnitDir d = s.direction();
        for (std::size_t i = 0; i < n; ++i)
          if (angular_distance(c.dirs[i], d) < sep) c.alive[i] = 0;
      }
      break;
    }
  }
  if (n > 0 && c.alive_count() == 0) {
    c.alive.assign(n, 1);
    c.filter_exhausted = true;
  }
}

// Mean of the current UMap sampled on a ring of `radius_deg` around `dir`
// (8 evenly spaced probes).
inline double neighbor_mean(const UMap& current, const UnitDir& dir, double radius_deg) {
  const ViewFrame f = view_frame(dir);
  const double r = deg2rad(radius_deg);
  double sum = 0.0;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * kPi * k / 8.0;
    const Vec3 p = std::cos(r) * f.forward.vec() + std::sin(r) * (std::cos(a) * f.right.vec() + std::sin(a) * f.up.vec());
    sum += current.interpolate(UnitDir(p));
  }
  return sum / 8.0;
}

inline double stable_product(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += std::log(std::max(v, kProductFloor));
  return std::exp(s);
}

inline double aggregate(std::span<const double> history, const AggregatePolicy& p, double neighbor_context = 0.0) {
  require(!history.empty(), "aggregate: empty history");
  switch (p.kind) {
    case AggregatePolicy::Kind::kProductAll: return stable_product(history);
    case AggregatePolicy::Kind::kLastOnly: return history.back();
    case AggregatePolicy::Kind::kNeighborDiff: return history.back() - neighbor_context;
  }
  return 0.0;
}

struct Selection {
  std::size_t index = 0;
  double score = 0.0;
};

// Filters `c` in place, then returns the alive candidate of highest score
// (lowest index among equals).
inline Selection select_next(const EpisodeState& state, CandidateSet& c, const FilterPolicy& filter,
                             const AggregatePolicy& agg) {
  require(c.size() > 0, "select_next: no candidates");
  require(!state.history.empty(), "select_next: no UMap yet");
  filter_redundant(state, c, filter);
  std::optional<Selection> best;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.alive[i]) continue;
    const double ctx = agg.kind == AggregatePolicy::Kind::kNeighborDiff
                           ? neighbor_mean(state.history.back(), c.dirs[i], agg.radius_deg)
                           : 0.0;
    const double s = aggregate(c.values[i], agg, ctx);
    if (!best || s > best->score) best = Selection{i, s};
  }
  return *best;
}

inline constexpr std::size_t kDefaultCandidates = 512;

struct EpisodeConfig {
  int budget = 20;
  std::size_t candidates = kDefaultCandidates;
  FilterPolicy filter{};
  AggregatePolicy agg{};
  UncertaintyKind kind = UncertaintyKind::kPsnr;
  std::uint64_t seed = 0;
  Viewpoint start{0.0, 0.0, kDefaultRadius};
  int image_resolution = 128;  // input renders for image-based predictors
  double fov_deg = kDefaultFovDeg;
};

struct TrajectoryStep {
  std::size_t step = 0;
  Viewpoint view;
  std::vector<double> umap;
  // the candidate round that chose this view; absent for the start view
  std::optional<std::size_t> chosen_index;
  std::optional<double> score;
  std::optional<std::size_t> alive_count;
  std::optional<std::size_t> candidate_count;
  bool filter_exhausted = false;
};

struct EpisodeTrajectory {
  std::string predictor;
  std::optional<std::uint64_t> mesh_fingerprint;
  EpisodeConfig config;
  std::vector<TrajectoryStep> steps;
  bool incomplete = false;
  std::string error;
  std::optional<ErrorKind> error_kind;

  std::vector<Viewpoint> selected() const {
    std::vector<Viewpoint> out;
    for (const auto& s : steps) out.push_back(s.view);
    return out;
  }
};

inline std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// The episode loop. `scene` supplies the input renders for predictors that
// need them; with `image_dir` set they are also written there as PPM.
inline EpisodeTrajectory run_episode(Predictor& predictor, const EpisodeConfig& cfg, const Scene* scene = nullptr,
                                     const std::filesystem::path& image_dir = {}, EpisodeState* state_out = nullptr) {
  require(cfg.budget >= 1, "run_episode: budget must be at least 1");
  require(cfg.candidates >= 1, "run_episode: need at least one candidate");
  require(!predictor.needs_image() || scene, "run_episode: predictor needs images but no mesh was given");
  require(!predictor.needs_image_file() || (scene && !image_dir.empty()),
          "run_episode: predictor reads image files but no mesh or image directory was given");
  EpisodeTrajectory traj;
  traj.predictor = predictor.name();
  traj.config = cfg;
  if (scene) traj.mesh_fingerprint = scene->mesh().fingerprint();
  EpisodeState st;
  st.seed = cfg.seed;
  st.budget = cfg.budget;
  st.selected.push_back(cfg.start);
  TrajectoryStep pending{0, cfg.start, {}, std::nullopt, std::nullopt, std::nullopt, std::nullopt, false};
  for (int t = 0;; ++t) {
    const Viewpoint view = st.selected.back();
    try {
      PredictRequest req{view, cfg.kind, nullptr, {}};
      std::optional<Image> img;
      if (predictor.needs_image() || predictor.needs_image_file()) {
        img = quantized(scene->render(view, cfg.image_resolution, cfg.fov_deg));
        req.image = &*img;
        if (!image_dir.empty()) {
          std::filesystem::create_directories(image_dir);
          req.image_path = image_dir / ("step_" + two_digits(static_cast<std::size_t>(t)) + ".ppm");
          write_pnm(*img, req.image_path);
        }
      }
      st.history.push_back(predictor.predict(req).with_step(static_cast<std::size_t>(t)));
    } catch (const std::exception& e) {
      traj.incomplete = true;
      traj.error = e.what();
      if (const auto* pe = dynamic_cast<const Error*>(&e)) traj.error_kind = pe->kind();
      st.selected.pop_back();
      break;
    }
    const auto v = st.history.back().values();
    pending.umap.assign(v.begin(), v.end());
    traj.steps.push_back(pending);
    if (t + 1 >= cfg.budget) break;

    CandidateSet c = CandidateSet::build(
        sample_candidates(cfg.candidates, Rng::derive(cfg.seed, {static_cast<std::uint64_t>(t + 1)}).next_u64(),
                          cfg.start.radius()),
        st.history);
    const Selection sel = select_next(st, c, cfg.filter, cfg.agg);
    pending = TrajectoryStep{static_cast<std::size_t>(t + 1), c.views[sel.index], {}, sel.index, sel.score,
                             c.alive_count(), c.size(), c.filter_exhausted};
    st.selected.push_back(c.views[sel.index]);
    st.candidate_log.push_back(std::move(c));
  }
  if (state_out) *state_out = std::move(st);
  return traj;
}

inline constexpr int kTrajectoryFormatVersion = 1;

inline nlohmann::ordered_json trajectory_to_json(const EpisodeTrajectory& t) {
  using J = nlohmann::ordered_json;
  J j;
  j["format_version"] = kTrajectoryFormatVersion;
  j["predictor"] = t.predictor;
  j["mesh_fingerprint"] = t.mesh_fingerprint ? J(hex64(*t.mesh_fingerprint)) : J(nullptr);
  j["kind"] = std::string(to_string(t.config.kind));
  j["budget"] = t.config.budget;
  j["candidates"] = t.config.candidates;
  j["filter"] = t.config.filter.flag();
  j["agg"] = t.config.agg.flag();
  j["seed"] = t.config.seed;
  j["start"] = viewpoint_to_json(t.config.start);
  j["incomplete"] = t.incomplete;
  j["error"] = t.error;
  auto& steps = j["steps"] = J::array();
  for (const auto& s : t.steps) {
    J js;
    js["step"] = s.step;
    js["view"] = viewpoint_to_json(s.view);
    js["chosen_index"] = s.chosen_index ? J(*s.chosen_index) : J(nullptr);
    js["score"] = s.score ? J(*s.score) : J(nullptr);
    js["alive_count"] = s.alive_count ? J(*s.alive_count) : J(nullptr);
    js["candidate_count"] = s.candidate_count ? J(*s.candidate_count) : J(nullptr);
    js["filter_exhausted"] = s.filter_exhausted;
    js["umap"] = s.umap;
    steps.push_back(std::move(js));
  }
  return j;
}

inline std::string encode_trajectory(const EpisodeTrajectory& t) { return trajectory_to_json(t).dump(1) + "\n"; }

// Only what evaluation needs: the selected views and the mesh fingerprint.
struct TrajectorySummary {
  std::vector<Viewpoint> selected;
  std::optional<std::string> mesh_fingerprint;
  bool incomplete = false;
};

inline TrajectorySummary load_trajectory(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<int>() != kTrajectoryFormatVersion)
      fail(ErrorKind::kVersion, path.string() + ": unsupported trajectory version " + j.at("format_version").dump());
    TrajectorySummary s;
    const nlohmann::json fp = j.at("mesh_fingerprint");
    if (!fp.is_null()) s.mesh_fingerprint = fp.get<std::string>();
    s.incomplete = j.at("incomplete").get<bool>();
    const nlohmann::json steps = j.at("steps");
    for (const auto& st : steps) s.selected.push_back(viewpoint_from_json(st.at("view")));
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

enum class BaselineKind { kRandom, kFarthestPoint };

inline BaselineKind parse_baseline(const std::string& s) {
  if (s == "random") return BaselineKind::kRandom;
  if (s == "farthest" || s == "farthest-point") return BaselineKind::kFarthestPoint;
  fail(ErrorKind::kInvalidArgument, "unknown baseline '" + s + "' (random | farthest)");
}

inline constexpr std::size_t kFarthestPool = 8192;

// Random: independent area-uniform draws. FarthestPoint: greedy max-min
// angular distance over a Fibonacci pool rotated onto the start view (its
// first pool point sits next to the start), the start view selected first.
inline std::vector<Viewpoint> baseline_select(BaselineKind kind, int budget, std::uint64_t seed,
                                              const Viewpoint& start = Viewpoint(0.0, 0.0, kDefaultRadius)) {
  require(budget >= 1, "baseline_select: budget must be at least 1");
  const double radius = start.radius();
  if (kind == BaselineKind::kRandom) {
    Rng rng = Rng::derive(seed, {0xBA5E});
    std::vector<Viewpoint> out;
    for (int i = 0; i < budget; ++i) out.push_back(sample_uniform_viewpoint(rng, radius));
    return out;
  }
  Rng rng = Rng::derive(seed, {0xFA27});
  const ViewFrame f = view_frame(start.direction());
  std::vector<UnitDir> pool;
  for (const auto& d : fibonacci_dirs(kFarthestPool, rng.uniform(0.0, 2.0 * kPi))) pool.emplace_back(f.to_world(d.vec()));
  std::vector<Viewpoint> out{start};
  std::vector<double> min_d(pool.size());
  const UnitDir s = start.direction();
  for (std::size_t i = 0; i < pool.size(); ++i) min_d[i] = angular_distance(pool[i], s);
  while (static_cast<int>(out.size()) < budget) {
    const std::size_t best = static_cast<std::size_t>(std::max_element(min_d.begin(), min_d.end()) - min_d.begin());
    out.push_back(Viewpoint::from_direction(pool[best], radius));
    for (std::size_t i = 0; i < pool.size(); ++i) min_d[i] = std::min(min_d[i], angular_distance(pool[i], pool[best]));
  }
  return out;
}

}  // namespace pun
