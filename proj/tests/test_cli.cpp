#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pun/pun.hpp"

namespace pun {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI inside `dir` with stderr folded into stdout.
CliRun cli(const fs::path& dir, const std::string& args) {
  fs::create_directories(dir);
  const std::string cmd = "cd '" + dir.string() + "' && '" PUN_CLI "' " + args + " 2>&1";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

const char* kSmallSim = "--resolution 32 --grid 24";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "pun_cli_test";
    fs::remove_all(root_);
    const CliRun r = cli(root_, "gen-meshes --out m");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, GenDatasetCountsAndIsByteIdentical) {
  const std::string args = std::string("gen-dataset --meshes ../m --views 12 --kind psnr --out d --seed 7 ") + kSmallSim;
  const CliRun a = cli(root_ / "gd1", args);
  ASSERT_EQ(a.code, 0) << a.out;
  const DatasetManifest m = load_manifest(root_ / "gd1" / "d" / "manifest.json");
  std::size_t records = 0;
  for (const auto& i : m.instances) records += i.views.size();
  EXPECT_EQ(records, procedural_names().size() * 12);
  EXPECT_NE(a.out.find("records " + std::to_string(records)), std::string::npos) << a.out;
  const CliRun b = cli(root_ / "gd2", args);
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(tree(root_ / "gd1" / "d"), tree(root_ / "gd2" / "d"));
}

TEST_F(Cli, MissingMeshDirectoryExitsTwoAndNamesIt) {
  const CliRun r = cli(root_, "gen-dataset --meshes no_such_meshes --out d");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no_such_meshes"), std::string::npos) << r.out;
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli(root_, "").code, 2);
  EXPECT_EQ(cli(root_, "frobnicate").code, 2);
  EXPECT_EQ(cli(root_, "run-avs --mesh m/sphere.obj --budget notanumber").code, 2);
  const CliRun bad = cli(root_, "run-avs --mesh m/sphere.obj --filter top32:x");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("top32:x"), std::string::npos) << bad.out;
  EXPECT_EQ(cli(root_, "run-avs --mesh m/sphere.obj --predictor oracle").code, 2);
  EXPECT_EQ(cli(root_, "--help").code, 0);
}

TEST_F(Cli, RunAvsSelectsTheBudgetAndWritesPlots) {
  const CliRun r = cli(root_, std::string("run-avs --mesh m/sphere.obj --predictor sim --budget 20 --filter small:0.1 "
                                       "--agg product --out avs20 --plots --plot-size 64 ") +
                               kSmallSim);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(root_ / "avs20" / "trajectory.json"));
  EXPECT_EQ(j.at("steps").size(), 20u);
  EXPECT_EQ(j.at("filter"), "small:0.1");
  EXPECT_EQ(j.at("agg"), "product");
  EXPECT_FALSE(j.at("incomplete").get<bool>());
  for (int t = 0; t < 20; ++t) {
    const fs::path p = root_ / "avs20" / "plots" / ("step_" + two_digits(static_cast<std::size_t>(t)) + ".ppm");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(read_pnm(p).width(), 64);
  }
  EXPECT_TRUE(fs::exists(root_ / "avs20" / "run_config.json"));
}

TEST_F(Cli, AggDiffSelectsNeighbourDifference) {
  const CliRun r = cli(root_, std::string("run-avs --mesh m/sphere.obj --budget 3 --candidates 32 --agg diff --out diff ") +
                               kSmallSim);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(root_ / "diff" / "trajectory.json"));
  EXPECT_EQ(j.at("agg"), "diff:5");
}

TEST_F(Cli, RunAvsIsByteIdenticalAcrossRuns) {
  const std::string args = std::string("run-avs --mesh ../m/box-with-notch.obj --budget 5 --candidates 64 --seed 11 "
                                        "--filter top32:8 --out r --plots --plot-size 64 ") +
                           kSmallSim;
  ASSERT_EQ(cli(root_ / "det1", args).code, 0);
  ASSERT_EQ(cli(root_ / "det2", args).code, 0);
  EXPECT_EQ(tree(root_ / "det1" / "r"), tree(root_ / "det2" / "r"));
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  const fs::path dir = root_ / "cfg";
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"mesh": "../m/sphere.obj", "budget": 4, "candidates": 16, "resolution": 32,
                                       "grid": 24, "agg": "last", "plots": false, "out": "from_config"})";
  const CliRun r = cli(dir, "run-avs --config c.json --budget 2 --out flagged");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir / "flagged" / "trajectory.json"));
  EXPECT_EQ(j.at("steps").size(), 2u);
  EXPECT_EQ(j.at("agg"), "last");
  EXPECT_FALSE(fs::exists(dir / "from_config"));
  // the provenance copy replays the same run
  const CliRun again = cli(dir, "run-avs --config flagged/run_config.json --out replay");
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(slurp(dir / "flagged" / "trajectory.json"), slurp(dir / "replay" / "trajectory.json"));
  EXPECT_EQ(cli(dir, "run-avs --config missing.json").code, 2);
}

TEST_F(Cli, ExternalPeerHandshakeAndFailures) {
  const std::string peer = std::string("'") + PUN_FAKE_PEER + " checkfile'";
  const CliRun ok = cli(root_, "run-avs --mesh m/sphere.obj --predictor external --peer " + peer +
                                " --budget 3 --candidates 16 --image-resolution 32 --out ext");
  ASSERT_EQ(ok.code, 0) << ok.out;
  EXPECT_TRUE(fs::exists(root_ / "ext" / "images" / "step_00.ppm"));
  EXPECT_EQ(nlohmann::json::parse(slurp(root_ / "ext" / "trajectory.json")).at("steps").size(), 3u);

  const CliRun spawn = cli(root_, "run-avs --mesh m/sphere.obj --predictor external --peer /no/such/peer --out ext2");
  EXPECT_EQ(spawn.code, 3) << spawn.out;
  const CliRun hello = cli(root_, std::string("run-avs --mesh m/sphere.obj --predictor external --peer '") +
                                   PUN_FAKE_PEER + " badhello' --out ext3");
  EXPECT_EQ(hello.code, 3) << hello.out;
  const CliRun shortv = cli(root_, std::string("run-avs --mesh m/sphere.obj --predictor external --peer '") +
                                    PUN_FAKE_PEER + " short' --budget 2 --image-resolution 32 --out ext4");
  EXPECT_EQ(shortv.code, 3) << shortv.out;
  EXPECT_NE(shortv.out.find("47"), std::string::npos) << shortv.out;
  EXPECT_TRUE(nlohmann::json::parse(slurp(root_ / "ext4" / "trajectory.json")).at("incomplete").get<bool>());
}

TEST_F(Cli, EvaluatePrintsComparableRowsUnderTheHeader) {
  ASSERT_EQ(cli(root_, std::string("run-avs --mesh m/l-shape.obj --budget 4 --candidates 32 --out ev_run ") + kSmallSim).code,
            0);
  const std::string args =
      "evaluate --mesh m/l-shape.obj --trajectory ev_run/trajectory.json --baseline random --budget 4 --seed 2 "
      "--poses-seed 9 --resolution 32 --grid 24 --samples 500 --out ";
  const CliRun a = cli(root_, args + "ev1");
  ASSERT_EQ(a.code, 0) << a.out;
  std::istringstream lines(a.out);
  std::string seeds, header, row1, row2;
  std::getline(lines, seeds);
  std::getline(lines, header);
  std::getline(lines, row1);
  std::getline(lines, row2);
  EXPECT_EQ(header, "method                 PSNR     SSIM      MSE      Acc       CR      Vis    Vis.A");
  EXPECT_EQ(row1.substr(0, 6), "ev_run");
  EXPECT_EQ(row2.substr(0, 6), "random");
  EXPECT_EQ(row1.size(), header.size());
  EXPECT_EQ(row2.size(), header.size());
  EXPECT_TRUE(fs::exists(root_ / "ev1" / "ev_run.report.txt"));
  EXPECT_TRUE(fs::exists(root_ / "ev1" / "random.per_pose.csv"));

  const CliRun b = cli(root_, args + "ev2");
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);
  auto t1 = tree(root_ / "ev1"), t2 = tree(root_ / "ev2");
  t1.erase("run_config.json");
  t2.erase("run_config.json");
  EXPECT_EQ(t1, t2);
}

TEST_F(Cli, EvaluateRejectsATrajectoryFromAnotherMesh) {
  ASSERT_EQ(cli(root_, std::string("run-avs --mesh m/sphere.obj --budget 2 --candidates 16 --out mm ") + kSmallSim).code,
            0);
  const CliRun r = cli(root_, "evaluate --mesh m/box.obj --trajectory mm/trajectory.json --out mm_eval");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("mm/trajectory.json"), std::string::npos) << r.out;
}

TEST_F(Cli, TrainKnnThenRunWithIt) {
  ASSERT_EQ(cli(root_, std::string("gen-dataset --meshes m --views 6 --out kd ") + kSmallSim).code, 0);
  const CliRun t = cli(root_, "train-knn --manifest kd/manifest.json --k 2 --out knn.json");
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_EQ(load_knn(root_ / "knn.json").k, 2);
  const CliRun r = cli(root_, "run-avs --mesh m/box.obj --predictor knn --model knn.json --budget 3 --candidates 16 "
                           "--image-resolution 32 --out knn_run");
  EXPECT_EQ(r.code, 0) << r.out;
  const CliRun d = cli(root_, "run-avs --predictor dataset --manifest kd/manifest.json --instance sphere --nearest "
                           "--budget 5 --out ds_run");
  EXPECT_EQ(d.code, 0) << d.out;
  const CliRun strict = cli(root_, "run-avs --predictor dataset --manifest kd/manifest.json --instance sphere "
                                "--budget 5 --out ds_strict");
  EXPECT_EQ(strict.code, 2) << strict.out;
}

TEST_F(Cli, RenderUmapMatchesTheGoldenImage) {
  const fs::path data(PUN_TEST_DATA_DIR);
  const CliRun r = cli(root_, "render-umap --umap '" + (data / "umap_golden.txt").string() + "' --out polar.ppm --size 64");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(root_ / "polar.ppm"), slurp(data / "umap_golden_64.ppm"));
  std::ofstream(root_ / "broken.umap") << "PUNUMAP 1 psnr 0\n0 0 2.73\n1 2 3\n";
  const CliRun bad = cli(root_, "render-umap --umap broken.umap --out broken.ppm");
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(cli(root_, "render-umap --umap nothing.umap").code, 2);
}

}  // namespace
}  // namespace pun
