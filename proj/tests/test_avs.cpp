#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "pun/avs.hpp"
#include "pun/external_predictor.hpp"

namespace pun {
namespace {

namespace fs = std::filesystem;

UMap random_umap(Rng& rng, const Viewpoint& v, std::size_t step = 0) {
  std::vector<double> vals(kAnchorCount);
  for (auto& x : vals) x = rng.uniform();
  return UMap::for_view(vals, v, UncertaintyKind::kPsnr, step);
}

UMap constant_umap(double c, const Viewpoint& v) {
  return UMap::for_view(std::vector<double>(kAnchorCount, c), v, UncertaintyKind::kPsnr, 0);
}

CandidateSet manual_set(const std::vector<Viewpoint>& views, const std::vector<std::vector<double>>& values) {
  CandidateSet c;
  c.views = views;
  for (const auto& v : views) c.dirs.push_back(v.direction());
  c.values = values;
  c.alive.assign(views.size(), 1);
  return c;
}

EpisodeState state_with(const std::vector<Viewpoint>& selected, std::vector<UMap> history) {
  EpisodeState s;
  s.selected = selected;
  s.history = std::move(history);
  return s;
}

TEST(Policies, FlagGrammar) {
  EXPECT_EQ(parse_filter("small:0.1").kind, FilterPolicy::Kind::kSmallThreshold);
  EXPECT_DOUBLE_EQ(parse_filter("small:0.25").threshold, 0.25);
  EXPECT_DOUBLE_EQ(parse_filter("small").threshold, 0.1);
  EXPECT_EQ(parse_filter("disable").kind, FilterPolicy::Kind::kDisable);
  EXPECT_EQ(parse_filter("top32:32").count, 32);
  EXPECT_EQ(parse_filter("top32:8").count, 8);
  EXPECT_DOUBLE_EQ(parse_filter("single:5").min_sep_deg, 5.0);
  EXPECT_EQ(parse_aggregate("product").kind, AggregatePolicy::Kind::kProductAll);
  EXPECT_EQ(parse_aggregate("last").kind, AggregatePolicy::Kind::kLastOnly);
  EXPECT_DOUBLE_EQ(parse_aggregate("diff:7.5").radius_deg, 7.5);
  EXPECT_DOUBLE_EQ(parse_aggregate("diff").radius_deg, 5.0);
  for (const char* f : {"small:0.1", "disable", "top32:32", "single:5"}) EXPECT_EQ(parse_filter(f).flag(), f);
  for (const char* a : {"product", "last", "diff:5"}) EXPECT_EQ(parse_aggregate(a).flag(), a);
  for (const char* bad : {"small:1.5", "small:0", "small:x", "top32:0", "top32:2.5", "single:-1", "median", "disable:3"})
    EXPECT_THROW(parse_filter(bad), Error) << bad;
  for (const char* bad : {"sum", "diff:0", "last:2"}) EXPECT_THROW(parse_aggregate(bad), Error) << bad;
}

TEST(Filter, SmallThresholdKillsAnyLowStep) {
  const auto views = sample_candidates(3, 1);
  auto c = manual_set(views, {{0.05, 0.9}, {0.1, 0.9}, {0.5, 0.5}});
  filter_redundant({}, c, FilterPolicy::small(0.1));
  EXPECT_EQ(c.alive, (std::vector<char>{0, 1, 1}));
  EXPECT_FALSE(c.filter_exhausted);
}

TEST(Filter, DisableKeepsEverything) {
  std::vector<std::vector<double>> vals(512, std::vector<double>{0.0, 0.0});
  auto c = manual_set(sample_candidates(512, 2), vals);
  filter_redundant({}, c, FilterPolicy::disable());
  EXPECT_EQ(c.alive_count(), 512u);
}

TEST(Filter, TopCountRanksEachStepWithIndexTies) {
  const auto views = sample_candidates(5, 3);
  // step 0 lows: 1 then 3 (tie with 4 broken by index); step 1 lows: 0 then 2
  auto c = manual_set(views, {{0.9, 0.1}, {0.1, 0.9}, {0.8, 0.5}, {0.2, 0.7}, {0.2, 0.6}});
  filter_redundant({}, c, FilterPolicy::top(2));
  EXPECT_EQ(c.alive, (std::vector<char>{0, 0, 0, 0, 1}));
}

TEST(Filter, SingleAngularBoundary) {
  const Viewpoint start(0.0, 0.0);
  const std::vector<Viewpoint> views = {Viewpoint(4.9, 30.0), Viewpoint(5.1, 200.0), Viewpoint(90.0, 0.0)};
  auto c = manual_set(views, {{0.5}, {0.5}, {0.5}});
  filter_redundant(state_with({start}, {}), c, FilterPolicy::single(5.0));
  EXPECT_EQ(c.alive, (std::vector<char>{0, 1, 1}));
}

TEST(Filter, ExhaustionRevivesAll) {
  auto c = manual_set(sample_candidates(4, 5), {{0.01}, {0.02}, {0.03}, {0.04}});
  filter_redundant({}, c, FilterPolicy::small(0.1));
  EXPECT_EQ(c.alive_count(), 4u);
  EXPECT_TRUE(c.filter_exhausted);
}

TEST(Aggregate, ProductLastAndFloor) {
  const std::vector<double> a = {0.9, 0.9}, b = {0.95, 0.2};
  EXPECT_NEAR(aggregate(a, AggregatePolicy::product()), 0.81, 1e-12);
  EXPECT_NEAR(aggregate(b, AggregatePolicy::product()), 0.19, 1e-12);
  EXPECT_EQ(aggregate(std::vector<double>{0.0, 0.7}, AggregatePolicy::last()),
            aggregate(std::vector<double>{1.0, 0.7}, AggregatePolicy::last()));
  const double floored = aggregate(std::vector<double>{0.0, 0.5, 0.4}, AggregatePolicy::product());
  EXPECT_NEAR(floored, 1e-12 * 0.2, 1e-24);
  EXPECT_LT(floored, aggregate(std::vector<double>{1e-6, 1e-6}, AggregatePolicy::product()));
  EXPECT_DOUBLE_EQ(aggregate(std::vector<double>{0.3, 0.7}, AggregatePolicy::diff(5.0), 0.25), 0.45);
  EXPECT_THROW(aggregate(std::vector<double>{}, AggregatePolicy::product()), Error);
}

TEST(Aggregate, StableProductMatchesDirectProduct) {
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> v(1 + rng.below(20));
    double direct = 1.0;
    for (auto& x : v) {
      x = std::exp(rng.uniform(std::log(1e-6), 0.0));
      direct *= x;
    }
    EXPECT_NEAR(stable_product(v) / direct, 1.0, 1e-9);
  }
}

TEST(Aggregate, NeighborMeanOfAConstantMap) {
  const UMap u = constant_umap(0.375, Viewpoint(40.0, 80.0));
  for (const auto& d : fibonacci_dirs(30)) EXPECT_NEAR(neighbor_mean(u, d, 5.0), 0.375, 1e-12);
}

TEST(Select, SingleAliveAndArgmax) {
  Rng rng(1);
  const Viewpoint v0(0.0, 0.0);
  const auto st = state_with({v0}, {random_umap(rng, v0)});
  auto one = manual_set({Viewpoint(50.0, 50.0)}, {{0.3}});
  EXPECT_EQ(select_next(st, one, FilterPolicy::small(), AggregatePolicy::product()).index, 0u);
  auto two = manual_set(sample_candidates(2, 3), {{0.95, 0.2}, {0.9, 0.9}});
  const auto sel = select_next(st, two, FilterPolicy::small(), AggregatePolicy::product());
  EXPECT_EQ(sel.index, 1u);
  EXPECT_NEAR(sel.score, 0.81, 1e-12);
  auto tie = manual_set(sample_candidates(3, 3), {{0.4}, {0.6}, {0.6}});
  EXPECT_EQ(select_next(st, tie, FilterPolicy::disable(), AggregatePolicy::last()).index, 1u);
}

// Exhaustive search written independently of the library's filter code.
std::size_t brute_force_choice(const EpisodeState& st, const CandidateSet& c, const FilterPolicy& f,
                               const AggregatePolicy& a) {
  const std::size_t n = c.size();
  std::vector<bool> dead(n, false);
  if (f.kind == FilterPolicy::Kind::kSmallThreshold) {
    for (std::size_t i = 0; i < n; ++i)
      if (*std::min_element(c.values[i].begin(), c.values[i].end()) < f.threshold) dead[i] = true;
  } else if (f.kind == FilterPolicy::Kind::kTop) {
    for (std::size_t s = 0; s < c.values[0].size(); ++s) {
      std::vector<std::pair<double, std::size_t>> r;
      for (std::size_t i = 0; i < n; ++i) r.emplace_back(c.values[i][s], i);
      std::sort(r.begin(), r.end());
      for (std::size_t k = 0; k < std::min<std::size_t>(n, static_cast<std::size_t>(f.count)); ++k) dead[r[k].second] = true;
    }
  } else if (f.kind == FilterPolicy::Kind::kSingleAngular) {
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& s : st.selected)
        if (rad2deg(angular_distance(c.dirs[i], s.direction())) < f.min_sep_deg) dead[i] = true;
  }
  if (std::all_of(dead.begin(), dead.end(), [](bool d) { return d; })) dead.assign(n, false);
  std::size_t best = n;
  double best_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (dead[i]) continue;
    double s = 0.0;
    if (a.kind == AggregatePolicy::Kind::kProductAll) {
      double lg = 0.0;
      for (double v : c.values[i]) lg += std::log(std::max(v, 1e-12));
      s = std::exp(lg);
    } else if (a.kind == AggregatePolicy::Kind::kLastOnly) {
      s = c.values[i].back();
    } else {
      s = c.values[i].back() - neighbor_mean(st.history.back(), c.dirs[i], a.radius_deg);
    }
    if (best == n || s > best_s) {
      best = i;
      best_s = s;
    }
  }
  return best;
}

TEST(Select, MatchesExhaustiveSearchForEveryPolicyPair) {
  const std::vector<FilterPolicy> filters = {FilterPolicy::small(0.1), FilterPolicy::disable(), FilterPolicy::top(32),
                                             FilterPolicy::top(4), FilterPolicy::single(5.0), FilterPolicy::single(40.0)};
  const std::vector<AggregatePolicy> aggs = {AggregatePolicy::product(), AggregatePolicy::last(),
                                             AggregatePolicy::diff(5.0)};
  Rng rng(2024);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<Viewpoint> sel;
    std::vector<UMap> hist;
    for (std::size_t s = 0; s < 3; ++s) {
      sel.push_back(sample_uniform_viewpoint(rng, kDefaultRadius));
      hist.push_back(random_umap(rng, sel.back(), s));
    }
    const auto st = state_with(sel, hist);
    const auto views = sample_candidates(16, rng.next_u64());
    std::vector<std::vector<double>> vals(16, std::vector<double>(3));
    for (auto& row : vals)
      for (auto& v : row) v = rng.uniform() < 0.15 ? rng.uniform(0.0, 0.1) : rng.uniform();
    for (const auto& f : filters)
      for (const auto& a : aggs) {
        auto c = manual_set(views, vals);
        const auto expect = brute_force_choice(st, c, f, a);
        EXPECT_EQ(select_next(st, c, f, a).index, expect) << f.flag() << " " << a.flag() << " instance " << inst;
      }
  }
}

TEST(Select, ProductArgmaxIgnoresAUniformScaleOfTheLastStep) {
  Rng rng(31);
  const Viewpoint v0(0.0, 0.0);
  const auto st = state_with({v0}, {random_umap(rng, v0)});
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::vector<double>> vals(64, std::vector<double>(3));
    for (auto& row : vals)
      for (auto& v : row) v = rng.uniform(0.2, 1.0);
    auto a = manual_set(sample_candidates(64, 7), vals);
    for (auto& row : vals) row.back() *= 0.37;
    auto b = manual_set(sample_candidates(64, 7), vals);
    EXPECT_EQ(select_next(st, a, FilterPolicy::disable(), AggregatePolicy::product()).index,
              select_next(st, b, FilterPolicy::disable(), AggregatePolicy::product()).index);
  }
}

TEST(Candidates, InterpolatedAgainstEveryHistoricalMap) {
  Rng rng(12);
  std::vector<UMap> hist = {random_umap(rng, Viewpoint(0.0, 0.0), 0), random_umap(rng, Viewpoint(70.0, 10.0), 1)};
  const auto c = CandidateSet::build(sample_candidates(512, 9), hist);
  ASSERT_EQ(c.size(), 512u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    ASSERT_EQ(c.values[i].size(), 2u);
    for (std::size_t s = 0; s < 2; ++s) {
      EXPECT_EQ(c.values[i][s], hist[s].interpolate(c.dirs[i]));
      EXPECT_GE(c.values[i][s], 0.0);
      EXPECT_LE(c.values[i][s], 1.0);
    }
  }
}

SimConfig tiny_sim() {
  SimConfig c;
  c.resolution = 32;
  c.grid = 24;
  return c;
}

TEST(Episode, BudgetOneIsJustTheStartView) {
  SimulatorOracle oracle(Scene(make_sphere(2)), tiny_sim());
  EpisodeConfig cfg;
  cfg.budget = 1;
  EpisodeState st;
  const auto t = run_episode(oracle, cfg, nullptr, {}, &st);
  ASSERT_EQ(t.steps.size(), 1u);
  EXPECT_EQ(t.steps[0].view, Viewpoint(0.0, 0.0, 2.73));
  EXPECT_FALSE(t.steps[0].chosen_index.has_value());
  EXPECT_TRUE(st.candidate_log.empty());
  EXPECT_EQ(st.history.size(), 1u);
}

TEST(Episode, DeterministicWithHistoryPerSelection) {
  const Scene scene(make_procedural("box-with-notch"));
  EpisodeConfig cfg;
  cfg.budget = 5;
  cfg.candidates = 128;
  cfg.seed = 17;
  SimulatorOracle a(scene, tiny_sim()), b(scene, tiny_sim());
  EpisodeState st;
  const auto ta = run_episode(a, cfg, &scene, {}, &st);
  const auto tb = run_episode(b, cfg, &scene);
  EXPECT_EQ(encode_trajectory(ta), encode_trajectory(tb));
  ASSERT_EQ(ta.steps.size(), 5u);
  EXPECT_EQ(st.history.size(), st.selected.size());
  EXPECT_EQ(st.candidate_log.size(), 4u);
  for (std::size_t s = 0; s < st.history.size(); ++s) {
    EXPECT_EQ(st.history[s].step_index(), s);
    EXPECT_EQ(st.history[s].source_view(), st.selected[s]);
  }
  for (std::size_t s = 1; s < ta.steps.size(); ++s) {
    EXPECT_EQ(*ta.steps[s].candidate_count, 128u);
    const auto& c = st.candidate_log[s - 1];
    EXPECT_EQ(c.views[*ta.steps[s].chosen_index], ta.steps[s].view);
    EXPECT_EQ(c.values[*ta.steps[s].chosen_index].size(), s);
  }
  cfg.seed = 18;
  SimulatorOracle c(scene, tiny_sim());
  EXPECT_NE(encode_trajectory(run_episode(c, cfg, &scene)), encode_trajectory(ta));
}

class FailingPredictor : public Predictor {
 public:
  std::string name() const override { return "failing"; }
  UMap predict(const PredictRequest& req) override {
    if (++calls_ == 3) fail(ErrorKind::kPeer, "peer went away");
    return constant_umap(0.5, req.view);
  }

 private:
  int calls_ = 0;
};

TEST(Episode, PredictorFailureLeavesAnIncompleteTrajectory) {
  FailingPredictor p;
  EpisodeConfig cfg;
  cfg.budget = 6;
  const auto t = run_episode(p, cfg);
  EXPECT_TRUE(t.incomplete);
  EXPECT_EQ(t.steps.size(), 2u);
  EXPECT_EQ(t.error_kind, ErrorKind::kPeer);
  EXPECT_NE(t.error.find("peer went away"), std::string::npos);
}

TEST(Episode, ExternalPeerReadsTheWrittenImages) {
  const Scene scene(make_sphere(2));
  ExternalPredictor p(std::string(PUN_FAKE_PEER) + " checkfile");
  EpisodeConfig cfg;
  cfg.budget = 3;
  cfg.image_resolution = 32;
  const fs::path dir = fs::temp_directory_path() / "pun_avs_ext";
  fs::remove_all(dir);
  const auto t = run_episode(p, cfg, &scene, dir);
  EXPECT_FALSE(t.incomplete) << t.error;
  EXPECT_EQ(t.steps.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "step_02.ppm"));
  EXPECT_THROW(run_episode(p, cfg, &scene), Error);
}

TEST(Trajectory, JsonCarriesTheSelection) {
  const Scene scene(make_sphere(2));
  SimulatorOracle oracle(scene, tiny_sim());
  EpisodeConfig cfg;
  cfg.budget = 3;
  cfg.candidates = 64;
  cfg.filter = FilterPolicy::single(5.0);
  cfg.agg = AggregatePolicy::diff(5.0);
  const auto t = run_episode(oracle, cfg, &scene);
  const fs::path p = fs::temp_directory_path() / "pun_traj.json";
  write_text_file(p, encode_trajectory(t));
  const auto s = load_trajectory(p);
  EXPECT_EQ(s.selected, t.selected());
  EXPECT_EQ(s.mesh_fingerprint, hex64(scene.mesh().fingerprint()));
  const auto j = nlohmann::json::parse(read_text_file(p));
  EXPECT_EQ(j["filter"], "single:5");
  EXPECT_EQ(j["agg"], "diff:5");
  EXPECT_TRUE(j["steps"][0]["chosen_index"].is_null());
  EXPECT_EQ(j["steps"][1]["umap"].size(), 48u);
}

TEST(Baseline, FarthestPointGeometry) {
  const auto two = baseline_select(BaselineKind::kFarthestPoint, 2, 0);
  EXPECT_NEAR(rad2deg(angular_distance(two[0].direction(), two[1].direction())), 180.0, 1.0);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto six = baseline_select(BaselineKind::kFarthestPoint, 6, seed, Viewpoint(30.0, 40.0));
    double min_angle = 180.0;
    for (std::size_t i = 0; i < six.size(); ++i)
      for (std::size_t j = i + 1; j < six.size(); ++j)
        min_angle = std::min(min_angle, rad2deg(angular_distance(six[i].direction(), six[j].direction())));
    EXPECT_GE(min_angle, 85.0) << seed;
    EXPECT_EQ(six[0], Viewpoint(30.0, 40.0));
  }
}

TEST(Baseline, RandomIsReproducibleAndAreaUniform) {
  const auto a = baseline_select(BaselineKind::kRandom, 20, 5);
  EXPECT_EQ(a, baseline_select(BaselineKind::kRandom, 20, 5));
  EXPECT_NE(a, baseline_select(BaselineKind::kRandom, 20, 6));
  const auto many = baseline_select(BaselineKind::kRandom, 20000, 1);
  std::size_t north = 0;
  for (const auto& v : many) north += v.direction().z() > 0.0;
  EXPECT_NEAR(static_cast<double>(north) / many.size(), 0.5, 0.015);
  EXPECT_THROW(baseline_select(BaselineKind::kRandom, 0, 1), Error);
  EXPECT_EQ(parse_baseline("farthest"), BaselineKind::kFarthestPoint);
  EXPECT_THROW(parse_baseline("nvf"), Error);
}

}  // namespace
}  // namespace pun
