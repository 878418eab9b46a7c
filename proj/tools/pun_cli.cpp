// pun: dataset generation, predictor training, view-selection episodes,
// evaluation and polar-map plots.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "pun/pun.hpp"

namespace fs = std::filesystem;
using namespace pun;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 2;
constexpr int kExitPeer = 3;

int exit_code_for(ErrorKind k) { return k == ErrorKind::kPeer || k == ErrorKind::kProtocol ? kExitPeer : kExitData; }

// --config FILE holds a JSON object keyed by long flag names. Its entries are
// spliced in as flags unless the same flag is also given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(config));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, config + ": " + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::kFormat, config + ": expected a JSON object");
  out.assign(args.begin(), args.begin() + std::min<std::size_t>(1, args.size()));
  auto scalar = [&](const nlohmann::json& v, const std::string& key) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    fail(ErrorKind::kFormat, config + ": value of '" + key + "' must be a string, number or boolean");
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "command" || key == "config" || given.count(key)) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back("--" + key);
      continue;
    }
    if (v.is_null()) continue;
    if (v.is_array()) {
      for (const auto& e : v) out.insert(out.end(), {"--" + key, scalar(e, key)});
      continue;
    }
    out.insert(out.end(), {"--" + key, scalar(v, key)});
  }
  out.insert(out.end(), args.begin() + std::min<std::size_t>(1, args.size()), args.end());
  return out;
}

// Resolved options of one subcommand, readable back through --config.
std::string provenance(const CLI::App& sub) {
  nlohmann::ordered_json j;
  j["command"] = sub.get_name();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "config") continue;
    if (o->get_items_expected_max() == 0) {
      j[name] = o->count() > 0;
    } else if (o->get_expected_max() > 1) {
      j[name] = o->results();
    } else if (o->count() > 0) {
      j[name] = o->results().back();
    } else if (!o->get_default_str().empty()) {
      j[name] = o->get_default_str();
    } else {
      j[name] = nullptr;
    }
  }
  return j.dump(1) + "\n";
}

void write_provenance(const CLI::App& sub, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, provenance(sub));
}

std::vector<UncertaintyKind> parse_kinds(const std::string& s) {
  std::vector<UncertaintyKind> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch != ',') {
      cur += ch;
      continue;
    }
    if (!cur.empty()) out.push_back(parse_uncertainty_kind(cur));
    cur.clear();
  }
  require(!out.empty(), "no uncertainty kind given");
  for (auto k : out) require_computable(k);
  return out;
}

UncertaintyKind parse_kind(const std::string& s) {
  const auto k = parse_uncertainty_kind(s);
  require_computable(k);
  return k;
}

Viewpoint parse_view(const std::string& s) {
  std::vector<double> v;
  std::string cur;
  for (char ch : s + ",") {
    if (ch != ',') {
      cur += ch;
      continue;
    }
    double x = 0.0;
    if (!parse_real(cur, x)) fail(ErrorKind::kInvalidArgument, "bad view '" + s + "' (elevation,azimuth,radius in degrees)");
    v.push_back(x);
    cur.clear();
  }
  if (v.size() != 3) fail(ErrorKind::kInvalidArgument, "bad view '" + s + "' (elevation,azimuth,radius in degrees)");
  return Viewpoint(v[0], v[1], v[2]);
}

TriMesh load_mesh(const std::string& path) {
  if (!fs::is_regular_file(path)) fail(ErrorKind::kNotFound, "mesh file not found: " + path);
  return load_obj(path);
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return s.empty() ? "run" : s;
}

// ---------------------------------------------------------------------------

struct GenMeshesArgs {
  std::string out = "meshes";
  std::vector<std::string> names;
};

int cmd_gen_meshes(const CLI::App& sub, const GenMeshesArgs& a) {
  const auto names = a.names.empty() ? procedural_names() : a.names;
  fs::create_directories(a.out);
  for (const auto& n : names) {
    const fs::path p = fs::path(a.out) / (n + ".obj");
    write_obj(make_procedural(n), p);
    const TriMesh m = load_obj(p);
    std::printf("%s  %zu faces  fingerprint %s\n", p.string().c_str(), m.faces().size(), hex64(m.fingerprint()).c_str());
  }
  write_provenance(sub, fs::path(a.out) / "run_config.json");
  return kExitOk;
}

struct SimArgs {
  int resolution = 128;
  int grid = 64;
  bool conservative = false;

  SimConfig config() const {
    require(resolution >= 8, "--resolution must be at least 8");
    require(grid >= 4, "--grid must be at least 4");
    SimConfig c;
    c.resolution = resolution;
    c.grid = grid;
    c.carve.conservative = conservative;
    return c;
  }
};

void add_sim_flags(CLI::App* sub, SimArgs& s, const char* what) {
  sub->add_option("--resolution", s.resolution, std::string("render resolution for ") + what);
  sub->add_option("--grid", s.grid, "voxel cells per hull axis");
  sub->add_flag("--conservative", s.conservative, "carve a cell only when its whole footprint is background");
}

struct GenDatasetArgs {
  std::string meshes;
  std::string out = "dataset";
  int views = 12;
  std::string kind = "psnr";
  std::uint64_t seed = 0;
  SimArgs sim;
};

int cmd_gen_dataset(const CLI::App& sub, const GenDatasetArgs& a) {
  if (!fs::is_directory(a.meshes)) fail(ErrorKind::kNotFound, "mesh directory not found: " + a.meshes);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(a.meshes))
    if (e.is_regular_file() && e.path().extension() == ".obj") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) fail(ErrorKind::kNotFound, "no .obj files in " + a.meshes);
  DatasetOptions opts;
  opts.views_per_instance = a.views;
  opts.kinds = parse_kinds(a.kind);
  opts.seed = a.seed;
  opts.sim = a.sim.config();
  const DatasetManifest m = gen_dataset(paths, opts, a.out);
  std::size_t records = 0;
  for (const auto& i : m.instances) records += i.views.size();
  for (const auto& s : m.skipped) std::fprintf(stderr, "skipped %s: %s\n", s.instance_id.c_str(), s.reason.c_str());
  std::printf("meshes %zu  instances %zu  skipped %zu  records %zu  seed %llu\n", paths.size(), m.instances.size(),
              m.skipped.size(), records, static_cast<unsigned long long>(a.seed));
  std::printf("manifest %s\n", (fs::path(a.out) / "manifest.json").string().c_str());
  write_provenance(sub, fs::path(a.out) / "run_config.json");
  return m.instances.empty() ? kExitData : kExitOk;
}

struct TrainKnnArgs {
  std::string manifest;
  std::string out = "knn.json";
  int k = 3;
  std::string kind = "psnr";
};

int cmd_train_knn(const CLI::App& sub, const TrainKnnArgs& a) {
  const KnnModel model = knn_fit(load_manifest(a.manifest), a.k, parse_kind(a.kind));
  save_knn(model, a.out);
  std::printf("k-NN model  k %d  rows %zu  kind %s  -> %s\n", model.k, model.values.size(), std::string(to_string(model.kind)).c_str(),
              a.out.c_str());
  write_provenance(sub, a.out + ".run_config.json");
  return kExitOk;
}

struct RunAvsArgs {
  std::string mesh;
  std::string predictor = "sim";
  std::string peer;
  double timeout = kDefaultPeerTimeoutS;
  std::string manifest;
  std::string instance;
  bool nearest = false;
  std::string model;
  int budget = 20;
  std::size_t candidates = kDefaultCandidates;
  std::string filter = "small:0.1";
  std::string agg = "product";
  std::string kind = "psnr";
  std::uint64_t seed = 0;
  std::string start = "0,0,2.73";
  int image_resolution = 128;
  std::string out = "run";
  bool plots = false;
  int plot_size = 256;
  SimArgs sim;
};

int cmd_run_avs(const CLI::App& sub, const RunAvsArgs& a) {
  EpisodeConfig cfg;
  cfg.budget = a.budget;
  cfg.candidates = a.candidates;
  cfg.filter = parse_filter(a.filter);
  cfg.agg = parse_aggregate(a.agg);
  cfg.kind = parse_kind(a.kind);
  cfg.seed = a.seed;
  cfg.start = parse_view(a.start);
  cfg.image_resolution = a.image_resolution;
  const SimConfig sim = a.sim.config();

  std::optional<Scene> scene;
  if (!a.mesh.empty()) scene.emplace(load_mesh(a.mesh));
  std::unique_ptr<Predictor> predictor;
  if (a.predictor == "sim") {
    require(scene.has_value(), "--predictor sim needs --mesh");
    predictor = std::make_unique<SimulatorOracle>(*scene, sim);
  } else if (a.predictor == "dataset") {
    require(!a.manifest.empty(), "--predictor dataset needs --manifest");
    predictor = std::make_unique<DatasetOracle>(load_manifest(a.manifest), a.instance, cfg.kind, a.nearest);
  } else if (a.predictor == "knn") {
    require(!a.model.empty(), "--predictor knn needs --model");
    require(scene.has_value(), "--predictor knn needs --mesh");
    KnnModel m = load_knn(a.model);
    require(m.kind == cfg.kind, "k-NN model was trained for " + std::string(to_string(m.kind)) + ", not " + a.kind);
    predictor = std::make_unique<KnnRegressor>(std::move(m));
  } else if (a.predictor == "external") {
    require(!a.peer.empty(), "--predictor external needs --peer");
    require(scene.has_value(), "--predictor external needs --mesh");
    predictor = std::make_unique<ExternalPredictor>(a.peer, a.timeout);
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown predictor '" + a.predictor + "' (sim | dataset | knn | external)");
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  write_provenance(sub, out / "run_config.json");
  const fs::path image_dir = predictor->needs_image_file() ? out / "images" : fs::path();
  EpisodeState state;
  const EpisodeTrajectory traj = run_episode(*predictor, cfg, scene ? &*scene : nullptr, image_dir, &state);
  write_text_file(out / "trajectory.json", encode_trajectory(traj));
  if (a.plots) {
    fs::create_directories(out / "plots");
    for (std::size_t t = 0; t < state.history.size(); ++t)
      write_pnm(render_polar_map(state.history[t], a.plot_size), out / "plots" / ("step_" + two_digits(t) + ".ppm"));
  }
  std::size_t exhausted = 0;
  for (const auto& s : traj.steps) exhausted += s.filter_exhausted ? 1 : 0;
  std::printf("predictor %s  filter %s  agg %s  seed %llu  views %zu/%d  filter-exhausted %zu\n", traj.predictor.c_str(),
              cfg.filter.flag().c_str(), cfg.agg.flag().c_str(), static_cast<unsigned long long>(cfg.seed),
              traj.steps.size(), cfg.budget, exhausted);
  std::printf("trajectory %s\n", (out / "trajectory.json").string().c_str());
  if (traj.incomplete) {
    std::fprintf(stderr, "episode stopped early: %s\n", traj.error.c_str());
    return traj.error_kind ? exit_code_for(*traj.error_kind) : kExitData;
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string mesh;
  std::vector<std::string> trajectories;
  std::vector<std::string> baselines;
  std::vector<std::string> labels;
  int budget = 20;
  std::uint64_t seed = 0;
  std::string start = "0,0,2.73";
  std::uint64_t poses_seed = 0;
  double tau = kDefaultCompletionTau;
  std::size_t samples = kDefaultSurfaceSamples;
  std::string out = "eval";
  SimArgs sim;
};

int cmd_evaluate(const CLI::App& sub, const EvaluateArgs& a) {
  require(!a.trajectories.empty() || !a.baselines.empty(), "evaluate: give --trajectory and/or --baseline");
  require(a.labels.empty() || a.labels.size() == a.trajectories.size() + a.baselines.size(),
          "evaluate: --label must be given once per trajectory and baseline");
  Scene scene(load_mesh(a.mesh));
  const std::string fp = hex64(scene.mesh().fingerprint());

  struct Row {
    std::string label;
    std::vector<Viewpoint> views;
  };
  std::vector<Row> rows;
  for (const auto& t : a.trajectories) {
    const TrajectorySummary s = load_trajectory(t);
    if (s.mesh_fingerprint && *s.mesh_fingerprint != fp)
      fail(ErrorKind::kInvalidArgument, t + " was recorded on mesh " + *s.mesh_fingerprint + " but --mesh " + a.mesh +
                                            " is " + fp);
    if (s.incomplete) std::fprintf(stderr, "warning: %s is an incomplete episode\n", t.c_str());
    require(!s.selected.empty(), t + " holds no views");
    const fs::path p(t);
    rows.push_back({p.stem() == "trajectory" && p.has_parent_path() ? p.parent_path().filename().string()
                                                                     : p.stem().string(),
                    s.selected});
  }
  const Viewpoint start = parse_view(a.start);
  for (const auto& b : a.baselines) rows.push_back({b, baseline_select(parse_baseline(b), a.budget, a.seed, start)});
  std::set<std::string> used;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string l = sanitize(a.labels.empty() ? rows[i].label : a.labels[i]);
    const std::string base = l;
    for (int n = 2; used.count(l); ++n) l = base + "-" + std::to_string(n);
    used.insert(l);
    rows[i].label = l;
  }

  EvalConfig cfg;
  cfg.sim = a.sim.config();
  cfg.tau = a.tau;
  cfg.surface_samples = a.samples;
  const EvalContext ctx(scene, EvalPoseSet::make(a.poses_seed), cfg);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_provenance(sub, out / "run_config.json");
  std::printf("poses-seed %llu  baseline-seed %llu\n", static_cast<unsigned long long>(a.poses_seed),
              static_cast<unsigned long long>(a.seed));
  std::printf("%s\n", kTableHeader);
  std::string table = std::string(kTableHeader) + "\n";
  for (const auto& r : rows) {
    const EvalReport rep = ctx.evaluate(r.views);
    write_text_file(out / (r.label + ".report.txt"), encode_report(rep));
    write_text_file(out / (r.label + ".per_pose.csv"), encode_per_pose_csv(rep));
    const std::string line = table_row(r.label, rep);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    table += line + "\n";
  }
  write_text_file(out / "table.txt", table);
  return kExitOk;
}

struct RenderUmapArgs {
  std::string umap;
  std::string out = "umap.ppm";
  int size = 256;
};

int cmd_render_umap(const CLI::App& sub, const RenderUmapArgs& a) {
  require(a.size >= 16, "--size must be at least 16");
  write_pnm(render_polar_map(read_umap(a.umap), a.size), a.out);
  std::printf("%s\n", a.out.c_str());
  write_provenance(sub, a.out + ".run_config.json");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pun: active view selection with neural uncertainty maps"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_unused;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_unused, "JSON file of flag values; flags given here win");
  };

  GenMeshesArgs gm;
  auto* s_gm = app.add_subcommand("gen-meshes", "write the procedural test meshes as OBJ");
  add_config(s_gm);
  s_gm->add_option("--out", gm.out, "output directory");
  s_gm->add_option("--name", gm.names, "mesh name (repeatable; default all)");

  GenDatasetArgs gd;
  auto* s_gd = app.add_subcommand("gen-dataset", "render views and simulate UMaps for every mesh in a directory");
  add_config(s_gd);
  s_gd->add_option("--meshes", gd.meshes, "directory of .obj meshes")->required();
  s_gd->add_option("--out", gd.out, "output directory");
  s_gd->add_option("--views", gd.views, "views per mesh (1..48)");
  s_gd->add_option("--kind", gd.kind, "uncertainty kinds, comma separated (psnr, ssim, mse)");
  s_gd->add_option("--seed", gd.seed, "selects the anchor offset");
  add_sim_flags(s_gd, gd.sim, "views and hull UMaps");

  TrainKnnArgs tk;
  auto* s_tk = app.add_subcommand("train-knn", "fit the k-NN image regressor on a dataset");
  add_config(s_tk);
  s_tk->add_option("--manifest", tk.manifest, "dataset manifest.json")->required();
  s_tk->add_option("--out", tk.out, "model file");
  s_tk->add_option("--k", tk.k, "neighbours");
  s_tk->add_option("--kind", tk.kind, "uncertainty kind");

  RunAvsArgs ra;
  auto* s_ra = app.add_subcommand("run-avs", "run one view-selection episode");
  add_config(s_ra);
  s_ra->add_option("--mesh", ra.mesh, "object mesh (.obj)");
  s_ra->add_option("--predictor", ra.predictor, "sim | dataset | knn | external");
  s_ra->add_option("--peer", ra.peer, "command line of an external predictor");
  s_ra->add_option("--timeout", ra.timeout, "seconds to wait for each peer reply");
  s_ra->add_option("--manifest", ra.manifest, "dataset manifest for --predictor dataset");
  s_ra->add_option("--instance", ra.instance, "dataset instance id");
  s_ra->add_flag("--nearest", ra.nearest, "dataset oracle answers off-grid views from the nearest stored view");
  s_ra->add_option("--model", ra.model, "k-NN model file for --predictor knn");
  s_ra->add_option("--budget", ra.budget, "views to select, start included");
  s_ra->add_option("--candidates", ra.candidates, "candidates sampled per step");
  s_ra->add_option("--filter", ra.filter, "small:T | disable | top32:N | single:DEG");
  s_ra->add_option("--agg", ra.agg, "product | last | diff:DEG");
  s_ra->add_option("--kind", ra.kind, "uncertainty kind");
  s_ra->add_option("--seed", ra.seed, "candidate sampling seed");
  s_ra->add_option("--start", ra.start, "start view as elevation,azimuth,radius");
  s_ra->add_option("--image-resolution", ra.image_resolution, "input render size for image predictors");
  s_ra->add_option("--out", ra.out, "run directory");
  s_ra->add_flag("--plots", ra.plots, "write a polar map per step");
  s_ra->add_option("--plot-size", ra.plot_size, "polar map size in pixels");
  add_sim_flags(s_ra, ra.sim, "the simulator oracle");

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "score selections with a visual hull against 40 fixed poses");
  add_config(s_ev);
  s_ev->add_option("--mesh", ev.mesh, "object mesh (.obj)")->required();
  s_ev->add_option("--trajectory", ev.trajectories, "trajectory.json from run-avs (repeatable)");
  s_ev->add_option("--baseline", ev.baselines, "random | farthest (repeatable)");
  s_ev->add_option("--label", ev.labels, "row label per trajectory then baseline");
  s_ev->add_option("--budget", ev.budget, "views per baseline");
  s_ev->add_option("--seed", ev.seed, "baseline seed");
  s_ev->add_option("--start", ev.start, "baseline start view");
  s_ev->add_option("--poses-seed", ev.poses_seed, "seed of the 40 test poses");
  s_ev->add_option("--tau", ev.tau, "completion distance threshold");
  s_ev->add_option("--samples", ev.samples, "ground-truth surface samples");
  s_ev->add_option("--out", ev.out, "output directory");
  add_sim_flags(s_ev, ev.sim, "ground truth and hull");

  RenderUmapArgs ru;
  auto* s_ru = app.add_subcommand("render-umap", "draw a UMap file as a polar pixmap");
  add_config(s_ru);
  s_ru->add_option("--umap", ru.umap, "UMap file")->required();
  s_ru->add_option("--out", ru.out, "output .ppm");
  s_ru->add_option("--size", ru.size, "image size in pixels");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitData;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  }

  try {
    if (*s_gm) return cmd_gen_meshes(*s_gm, gm);
    if (*s_gd) return cmd_gen_dataset(*s_gd, gd);
    if (*s_tk) return cmd_train_knn(*s_tk, tk);
    if (*s_ra) return cmd_run_avs(*s_ra, ra);
    if (*s_ev) return cmd_evaluate(*s_ev, ev);
    if (*s_ru) return cmd_render_umap(*s_ru, ru);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitData;
}
