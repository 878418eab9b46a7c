#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <filesystem>

#include "pun/external_predictor.hpp"
#include "pun/predictor.hpp"

namespace pun {
namespace {

namespace fs = std::filesystem;

SimConfig tiny_sim() {
  SimConfig c;
  c.resolution = 32;
  c.grid = 24;
  return c;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kInvalidArgument;
}

// Three procedural meshes, 12 views each, generated once for the suite.
class Dataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fs::temp_directory_path() / "pun_pred_dataset");
    fs::remove_all(*dir_);
    fs::create_directories(*dir_ / "meshes");
    std::vector<fs::path> paths;
    for (const char* name : {"sphere", "box-with-notch", "l-shape"}) {
      paths.push_back(*dir_ / "meshes" / (std::string(name) + ".obj"));
      write_obj(make_procedural(name), paths.back());
    }
    DatasetOptions opts;
    opts.sim = tiny_sim();
    gen_dataset(paths, opts, *dir_ / "data");
    manifest_ = new DatasetManifest(load_manifest(*dir_ / "data" / "manifest.json"));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static fs::path* dir_;
  static DatasetManifest* manifest_;
};

fs::path* Dataset::dir_ = nullptr;
DatasetManifest* Dataset::manifest_ = nullptr;

TEST(SimulatorOracle, EqualsMakeUmap) {
  const Scene scene(make_procedural("l-shape"));
  SimulatorOracle oracle(scene, tiny_sim());
  const Viewpoint v(63.0, 211.0);
  const UMap u = oracle.predict({v, UncertaintyKind::kSsim, nullptr, {}});
  EXPECT_EQ(u, make_umap(scene, v, UncertaintyKind::kSsim, tiny_sim()));
  EXPECT_EQ(encode_umap(u), encode_umap(make_umap(scene, v, UncertaintyKind::kSsim, tiny_sim())));
}

TEST_F(Dataset, OracleReturnsTheStoredMap) {
  DatasetOracle oracle(*manifest_, "box-with-notch", UncertaintyKind::kPsnr);
  ASSERT_EQ(oracle.entries().size(), 12u);
  const auto& rec = manifest_->instances[1].views[5];
  const UMap got = oracle.predict({rec.viewpoint, UncertaintyKind::kPsnr, nullptr, {}});
  EXPECT_EQ(encode_umap(got), read_text_file(manifest_->resolve(rec.umap_paths.at("psnr"))));
}

TEST_F(Dataset, OracleMissesAndNearestMode) {
  DatasetOracle strict(*manifest_, "sphere", UncertaintyKind::kPsnr);
  const Viewpoint off(33.3, 44.4);
  EXPECT_EQ(kind_of([&] { strict.predict({off, UncertaintyKind::kPsnr, nullptr, {}}); }), ErrorKind::kNotFound);
  EXPECT_EQ(kind_of([&] { strict.predict({off, UncertaintyKind::kSsim, nullptr, {}}); }), ErrorKind::kUnsupportedKind);
  EXPECT_EQ(kind_of([&] { DatasetOracle(*manifest_, "teapot", UncertaintyKind::kPsnr); }), ErrorKind::kNotFound);
  EXPECT_EQ(kind_of([&] { DatasetOracle(*manifest_, "sphere", UncertaintyKind::kMse); }), ErrorKind::kNotFound);
  EXPECT_EQ(kind_of([&] { DatasetOracle(DatasetManifest{}, "", UncertaintyKind::kPsnr); }), ErrorKind::kNotFound);
  EXPECT_EQ(kind_of([&] { DatasetOracle(*manifest_, "", UncertaintyKind::kPsnr); }), ErrorKind::kInvalidArgument);

  DatasetOracle nearest(*manifest_, "sphere", UncertaintyKind::kPsnr, true);
  const UMap got = nearest.predict({off, UncertaintyKind::kPsnr, nullptr, {}});
  std::size_t best = 0;
  for (std::size_t i = 1; i < nearest.entries().size(); ++i)
    if (angular_distance(nearest.entries()[i].view.direction(), off.direction()) <
        angular_distance(nearest.entries()[best].view.direction(), off.direction()))
      best = i;
  const auto want = nearest.entries()[best].umap.values();
  EXPECT_TRUE(std::equal(want.begin(), want.end(), got.values().begin()));
  const auto anchors = anchors_for_view(off);
  EXPECT_TRUE(std::equal(anchors.begin(), anchors.end(), got.anchors_world().begin()));
}

TEST_F(Dataset, KnnFitCountsRowsAndIsDeterministic) {
  const KnnModel a = knn_fit(*manifest_, 3, UncertaintyKind::kPsnr);
  EXPECT_EQ(a.rows(), 36u);
  EXPECT_EQ(a.features[0].size(), kFeatureDim);
  const KnnModel b = knn_fit(*manifest_, 3, UncertaintyKind::kPsnr);
  EXPECT_EQ(knn_to_json(a).dump(), knn_to_json(b).dump());
  const fs::path p = *dir_ / "model.json";
  save_knn(a, p);
  EXPECT_EQ(load_knn(p), a);
  EXPECT_EQ(kind_of([&] { knn_fit(*manifest_, 37, UncertaintyKind::kPsnr); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { knn_fit(*manifest_, 3, UncertaintyKind::kLpipsReserved); }), ErrorKind::kUnsupportedKind);
}

TEST_F(Dataset, KnnRecoversTrainingImages) {
  KnnModel m = knn_fit(*manifest_, 1, UncertaintyKind::kPsnr);
  const auto& rec = manifest_->instances[2].views[7];
  const Image img = read_pnm(manifest_->resolve(rec.image_path));
  const std::size_t row = 2 * 12 + 7;
  EXPECT_EQ(knn_predict(m, img), m.values[row]);

  m.k = 2;
  const auto nn = knn_neighbors(m, image_features(img));
  ASSERT_EQ(nn.size(), 2u);
  EXPECT_EQ(nn[0].first, row);
  const double w0 = 1.0 / (nn[0].second + kKnnEpsilon), w1 = 1.0 / (nn[1].second + kKnnEpsilon);
  EXPECT_GE(w0 / (w0 + w1), 0.999);

  KnnRegressor reg(m);
  const UMap u = reg.predict({rec.viewpoint, UncertaintyKind::kPsnr, &img, {}});
  EXPECT_EQ(u.source_view(), rec.viewpoint);
  EXPECT_EQ(kind_of([&] { reg.predict({rec.viewpoint, UncertaintyKind::kPsnr, nullptr, {}}); }),
            ErrorKind::kInvalidArgument);
}

TEST_F(Dataset, KnnStaysInsideTheTrainingRange) {
  const KnnModel m = knn_fit(*manifest_, 3, UncertaintyKind::kPsnr);
  std::vector<double> lo(kAnchorCount, 1.0), hi(kAnchorCount, 0.0);
  for (const auto& row : m.values)
    for (std::size_t a = 0; a < kAnchorCount; ++a) {
      lo[a] = std::min(lo[a], row[a]);
      hi[a] = std::max(hi[a], row[a]);
    }
  Rng rng(4);
  for (int q = 0; q < 20; ++q) {
    std::vector<double> px(32 * 32 * 3);
    for (auto& v : px) v = rng.uniform();
    const auto out = knn_predict(m, Image(32, 32, 3, px));
    for (std::size_t a = 0; a < kAnchorCount; ++a) {
      EXPECT_GE(out[a], lo[a] - 1e-12);
      EXPECT_LE(out[a], hi[a] + 1e-12);
    }
  }
}

TEST_F(Dataset, KnnBeatsTheConstantMeanHeldOut) {
  const KnnModel all = knn_fit(*manifest_, 3, UncertaintyKind::kPsnr);
  double err_knn = 0.0, err_mean = 0.0;
  for (std::size_t held = 0; held < all.rows(); ++held) {
    KnnModel train = all;
    train.features.erase(train.features.begin() + static_cast<std::ptrdiff_t>(held));
    train.values.erase(train.values.begin() + static_cast<std::ptrdiff_t>(held));
    train.views.erase(train.views.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<double> mean(kAnchorCount, 0.0);
    for (const auto& row : train.values)
      for (std::size_t a = 0; a < kAnchorCount; ++a) mean[a] += row[a] / static_cast<double>(train.rows());
    const std::size_t inst = held / 12, view = held % 12;
    const Image img = read_pnm(manifest_->resolve(manifest_->instances[inst].views[view].image_path));
    const auto pred = knn_predict(train, img);
    for (std::size_t a = 0; a < kAnchorCount; ++a) {
      err_knn += std::abs(pred[a] - all.values[held][a]);
      err_mean += std::abs(mean[a] - all.values[held][a]);
    }
  }
  EXPECT_LE(err_knn, err_mean);
  RecordProperty("knn_mae", std::to_string(err_knn / (36.0 * 48.0)));
  RecordProperty("mean_mae", std::to_string(err_mean / (36.0 * 48.0)));
}

TEST(Knn, EqualDistancesGiveTheMean) {
  KnnModel m;
  m.k = 4;
  for (int r = 0; r < 4; ++r) {
    std::vector<double> f(kFeatureDim, 0.0);
    f[static_cast<std::size_t>(r * 10)] = 1.0;
    m.features.push_back(f);
    m.values.push_back(std::vector<double>(kAnchorCount, 0.1 * (r + 1)));
    m.views.emplace_back(10.0 * r, 0.0);
  }
  // a constant image has all-zero centred features, at distance 1 from every row
  const auto out = knn_predict(m, Image(16, 16, 1, std::vector<double>(256, 0.3)));
  for (double v : out) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(Knn, RowOrderDoesNotMatterWithoutTies) {
  KnnModel m;
  m.k = 3;
  Rng rng(8);
  for (int r = 0; r < 10; ++r) {
    std::vector<double> f(kFeatureDim), v(kAnchorCount);
    for (auto& x : f) x = rng.uniform(-0.5, 0.5);
    for (auto& x : v) x = rng.uniform();
    m.features.push_back(f);
    m.values.push_back(v);
    m.views.emplace_back(15.0 * r, 0.0);
  }
  std::vector<double> px(64 * 64);
  for (auto& x : px) x = rng.uniform();
  const Image q(64, 64, 1, px);
  KnnModel rev = m;
  std::reverse(rev.features.begin(), rev.features.end());
  std::reverse(rev.values.begin(), rev.values.end());
  EXPECT_EQ(knn_predict(m, q), knn_predict(rev, q));
}

TEST(Knn, FeaturesAreAreaAveragedAndCentred) {
  std::vector<double> px(32 * 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) px[static_cast<std::size_t>(y) * 32 + x] = (x / 2 + y / 2) % 2 ? 0.8 : 0.2;
  const auto f = image_features(Image(32, 32, 1, px));
  for (int i = 0; i < 256; ++i) EXPECT_NEAR(std::abs(f[static_cast<std::size_t>(i)]), 0.3, 1e-12);
  const auto c = image_features(Image(40, 40, 1, std::vector<double>(1600, 0.6)));
  for (double v : c) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_EQ(kind_of([] { image_features(Image(8, 8, 1, std::vector<double>(64, 0.0))); }),
            ErrorKind::kInvalidArgument);
}

std::string peer(const std::string& mode) { return std::string(PUN_FAKE_PEER) + " " + mode; }

TEST(External, RequestLineGrammar) {
  EXPECT_EQ(format_predict_request(Viewpoint(45.0, 90.0, 2.73), "/tmp/a.ppm"), "PREDICT 45 90 2.73 /tmp/a.ppm");
}

TEST(External, ConstantPeer) {
  ExternalPredictor p(peer("const"));
  const Viewpoint v(30.0, 60.0);
  const UMap u = p.external_predict("/tmp/x.ppm", v, UncertaintyKind::kPsnr);
  for (double x : u.values()) EXPECT_EQ(x, 0.5);
  EXPECT_EQ(u.source_view(), v);
}

TEST(External, RequestFieldsReachThePeer) {
  ExternalPredictor p(peer("elev"));
  for (double el : {0.0, 45.0, 135.0}) {
    const UMap u = p.external_predict("/tmp/x.ppm", Viewpoint(el, 10.0), UncertaintyKind::kPsnr);
    EXPECT_DOUBLE_EQ(u.values()[0], el / 180.0);
  }
}

TEST(External, BadResponsesAreProtocolErrors) {
  const Viewpoint v(30.0, 60.0);
  for (const char* mode : {"short", "range", "garbage"}) {
    ExternalPredictor p(peer(mode));
    try {
      p.external_predict("/tmp/x.ppm", v, UncertaintyKind::kPsnr);
      ADD_FAILURE() << mode;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kProtocol) << mode;
      if (std::string(mode) == "short") EXPECT_NE(std::string(e.what()).find("47"), std::string::npos);
      if (std::string(mode) == "garbage") EXPECT_NE(std::string(e.what()).find("0.5x"), std::string::npos);
    }
  }
  EXPECT_EQ(kind_of([&] { ExternalPredictor p(peer("badhello")); }), ErrorKind::kProtocol);
}

TEST(External, PeerFailuresArePeerErrors) {
  const Viewpoint v(30.0, 60.0);
  EXPECT_EQ(kind_of([&] { ExternalPredictor p(peer("err")); p.external_predict("/x.ppm", v, UncertaintyKind::kPsnr); }),
            ErrorKind::kPeer);
  EXPECT_EQ(kind_of([&] { ExternalPredictor p(peer("crash")); p.external_predict("/x.ppm", v, UncertaintyKind::kPsnr); }),
            ErrorKind::kPeer);
  EXPECT_EQ(kind_of([] { ExternalPredictor p("/nonexistent/upnet_server"); }), ErrorKind::kPeer);
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(kind_of([&] {
              ExternalPredictor p(peer("silent"), 0.3);
              p.external_predict("/x.ppm", v, UncertaintyKind::kPsnr);
            }),
            ErrorKind::kPeer);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

}  // namespace
}  // namespace pun
