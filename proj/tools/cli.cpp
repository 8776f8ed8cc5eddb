#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "demo/model.hpp"
#include "json.hpp"

namespace demo::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), used for the manifest's input content hash.

namespace {

struct Sha256 {
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  unsigned char block[64];
  std::size_t block_len = 0;
  std::uint64_t total_bits = 0;

  static std::uint32_t rotr(std::uint32_t x, int n) {
    return (x >> n) | (x << (32 - n));
  }

  void process() {
    static const std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b,
        0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01,
        0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7,
        0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc,
        0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152,
        0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
        0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
        0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08,
        0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f,
        0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(block[4 * i]) << 24) |
             (std::uint32_t(block[4 * i + 1]) << 16) |
             (std::uint32_t(block[4 * i + 2]) << 8) |
             std::uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 =
          rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 =
          rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5],
                  g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }

  void update(const unsigned char* data, std::size_t len) {
    total_bits += std::uint64_t(len) * 8;
    while (len > 0) {
      const std::size_t take = std::min(len, sizeof(block) - block_len);
      std::memcpy(block + block_len, data, take);
      block_len += take;
      data += take;
      len -= take;
      if (block_len == 64) {
        process();
        block_len = 0;
      }
    }
  }

  std::string finish() {
    const std::uint64_t bits = total_bits;  // length before padding
    const unsigned char one = 0x80;
    update(&one, 1);
    const unsigned char zero = 0;
    while (block_len != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i)
      len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len_be, 8);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (std::uint32_t v : h)
      for (int i = 28; i >= 0; i -= 4) out += hex[(v >> i) & 0xf];
    return out;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int thread_count(std::size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("DEMO_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<unsigned>(v);
  }
  if (n == 0) n = 1;
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Index-sharded parallel map with a deterministic result order.
template <typename Fn>
void parallel_over(std::size_t jobs, Fn&& fn) {
  const int workers = thread_count(jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < jobs; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

Config load_config(const std::string& path) {
  return path.empty() ? Config() : Config::from_file(path);
}

std::vector<Scene> load_scene_path(const std::string& path,
                                   const HorizonSpec& horizon,
                                   const DataOptions& data_opts,
                                   const VehicleAttributes& attrs) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv")
    return load_trajectory_csv(path, horizon, data_opts, attrs);
  return load_scenes_json(path);
}

std::vector<Scene> load_data_dir(const std::string& dir,
                                 const HorizonSpec& horizon,
                                 const DataOptions& data_opts,
                                 const VehicleAttributes& attrs,
                                 std::string* hashed = nullptr) {
  if (!fs::is_directory(dir))
    throw DataError("data directory '" + dir + "' does not exist");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".csv" || ext == ".json")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw DataError("no .csv or .json scene files under '" + dir + "'");
  std::vector<Scene> scenes;
  Sha256 hasher;
  for (const std::string& f : files) {
    const std::string bytes = read_file(f);
    hasher.update(reinterpret_cast<const unsigned char*>(bytes.data()),
                  bytes.size());
    auto part = load_scene_path(f, horizon, data_opts, attrs);
    scenes.insert(scenes.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
  }
  if (hashed) *hashed = hasher.finish();
  return scenes;
}

json predictions_to_json(const std::vector<std::string>& ids,
                         const std::vector<PredictionSet>& preds) {
  json arr = json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    json j;
    j["scene_id"] = ids[i];
    j["maneuver_probs"] = preds[i].maneuver_probs;
    json trajs = json::array();
    for (const auto& t : preds[i].trajectories) {
      json traj = json::array();
      for (const auto& p : t) traj.push_back({p[0], p[1]});
      trajs.push_back(traj);
    }
    j["trajectories"] = trajs;
    arr.push_back(j);
  }
  return arr;
}

void predictions_from_json(const json& arr, std::vector<std::string>& ids,
                           std::vector<PredictionSet>& preds) {
  if (!arr.is_array()) throw DataError("predictions must be a JSON array");
  for (const auto& j : arr) {
    ids.push_back(j.at("scene_id").get<std::string>());
    PredictionSet set;
    set.maneuver_probs =
        j.at("maneuver_probs").get<std::vector<double>>();
    for (const auto& traj : j.at("trajectories")) {
      std::vector<std::array<double, 2>> t;
      for (const auto& p : traj)
        t.push_back({p[0].get<double>(), p[1].get<double>()});
      set.trajectories.push_back(std::move(t));
    }
    preds.push_back(std::move(set));
  }
}

std::string sanitize_filename(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      c = '_';
  return s;
}

/// Minimal trajectory-overlay SVG: history gray, ground truth green, the
/// most probable candidate red, the others faint.
std::string scene_overlay_svg(const Scene& scene, const PredictionSet& pred) {
  std::vector<std::array<double, 2>> all;
  for (const auto& s : scene.target.history) all.push_back({s.x_m, s.y_m});
  for (const auto& s : scene.target.future) all.push_back({s.x_m, s.y_m});
  for (const auto& t : pred.trajectories)
    for (const auto& p : t) all.push_back(p);
  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  for (const auto& p : all) {
    min_x = std::min(min_x, p[0]);
    max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]);
    max_y = std::max(max_y, p[1]);
  }
  const double pad = 5.0, w = 640.0, h = 360.0;
  min_x -= pad; max_x += pad; min_y -= pad; max_y += pad;
  const double sx = w / (max_x - min_x), sy = h / (max_y - min_y);
  const auto map_pt = [&](const std::array<double, 2>& p) {
    std::ostringstream os;
    os << (p[0] - min_x) * sx << "," << h - (p[1] - min_y) * sy;
    return os.str();
  };
  const auto polyline = [&](const std::vector<std::array<double, 2>>& pts,
                            const char* style) {
    std::string s = "<polyline fill=\"none\" " + std::string(style) +
                    " points=\"";
    for (const auto& p : pts) s += map_pt(p) + " ";
    return s + "\"/>\n";
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  std::vector<std::array<double, 2>> hist;
  for (const auto& s : scene.target.history) hist.push_back({s.x_m, s.y_m});
  svg << polyline(hist, "stroke=\"#888\" stroke-width=\"2\"");
  std::vector<std::array<double, 2>> gt;
  for (const auto& s : scene.target.future) gt.push_back({s.x_m, s.y_m});
  if (!gt.empty()) svg << polyline(gt, "stroke=\"#2a2\" stroke-width=\"2\"");
  const std::size_t best = most_probable_index(pred);
  for (std::size_t k = 0; k < pred.trajectories.size(); ++k)
    if (k != best)
      svg << polyline(pred.trajectories[k],
                      "stroke=\"#c66\" stroke-width=\"1\" opacity=\"0.35\"");
  svg << polyline(pred.trajectories[best],
                  "stroke=\"#c22\" stroke-width=\"2\"");
  svg << "</svg>\n";
  return svg.str();
}

struct ManifestTimings {
  double wall_s = 0.0;
  double load_s = 0.0;
  double work_s = 0.0;
};

void write_manifest(const std::string& out_dir, const Config& cfg,
                    std::uint64_t seed, const std::string& input_hash,
                    const std::string& checkpoint_path,
                    const std::string& metrics_path,
                    const ManifestTimings& timings) {
  json j;
  json snapshot = json::object();
  for (const auto& [k, v] : cfg.entries()) snapshot[k] = v;
  j["config"] = snapshot;
  j["seed"] = seed;
  j["input_hash"] = input_hash;
  j["checkpoint_path"] = checkpoint_path;
  j["metrics_path"] = metrics_path;
  j["timings"] = {{"wall_s", timings.wall_s},
                  {"load_s", timings.load_s},
                  {"work_s", timings.work_s}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << j.dump(2) << "\n";
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  return h.finish();
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const TrainArgs& args) {
  const auto t0 = Clock::now();
  Config cfg = load_config(args.config_path);
  const ModelConfig mc = ModelConfig::from_config(cfg, args.mode);
  const VehicleAttributes attrs = VehicleAttributes::from_config(cfg);
  const DataOptions data_opts = DataOptions::from_config(cfg);

  std::string input_hash;
  std::vector<Scene> scenes =
      load_data_dir(args.data_dir, mc.horizon, data_opts, attrs, &input_hash);
  const auto t1 = Clock::now();

  fs::create_directories(args.out_dir);
  DemoModel model(mc, args.seed);
  AdamW opt(cfg.get_double("train.weight_decay", 0.01));
  CosineSchedule schedule;
  schedule.lr_init = cfg.get_double("train.lr_init", 0.001);
  schedule.lr_min = cfg.get_double("train.lr_min", 1e-5);
  const int steps_per_epoch = static_cast<int>(
      (scenes.size() + static_cast<std::size_t>(args.batch) - 1) /
      static_cast<std::size_t>(args.batch));
  schedule.t_max = static_cast<long>(args.epochs) * steps_per_epoch;
  Rng rng(args.seed);

  const fs::path loss_csv_path = fs::path(args.out_dir) / "losses.csv";
  std::ofstream loss_csv(loss_csv_path);
  loss_csv << "epoch,total,kl,di,ce,ac,lr\n";
  loss_csv.precision(12);
  const fs::path final_ckpt = fs::path(args.out_dir) / "model.ckpt";
  for (int epoch = 1; epoch <= args.epochs; ++epoch) {
    const EpochStats stats =
        model.train_epoch(scenes, opt, schedule, rng, args.batch);
    loss_csv << epoch << ',' << stats.total << ',' << stats.kl << ','
             << stats.di << ',' << stats.ce << ',' << stats.ac << ','
             << stats.lr << '\n';
    loss_csv.flush();
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoint_epoch_%03d.ckpt", epoch);
    model.save_checkpoint((fs::path(args.out_dir) / name).string());
    model.save_checkpoint(final_ckpt.string());
    std::cout << "epoch " << epoch << "/" << args.epochs
              << " total=" << stats.total << " kl=" << stats.kl
              << " di=" << stats.di << " ce=" << stats.ce
              << " ac=" << stats.ac << " lr=" << stats.lr << "\n";
  }
  const auto t2 = Clock::now();

  ManifestTimings timings;
  timings.load_s = std::chrono::duration<double>(t1 - t0).count();
  timings.work_s = std::chrono::duration<double>(t2 - t1).count();
  timings.wall_s = std::chrono::duration<double>(t2 - t0).count();
  write_manifest(args.out_dir, cfg, args.seed, input_hash,
                 final_ckpt.string(), loss_csv_path.string(), timings);
}

// ---------------------------------------------------------------------------
// predict

void cmd_predict(const PredictArgs& args) {
  Config cfg = load_config(args.config_path);
  const ModelConfig mc = ModelConfig::from_config(cfg, args.mode);
  const VehicleAttributes attrs = VehicleAttributes::from_config(cfg);
  const DataOptions data_opts = DataOptions::from_config(cfg);

  DemoModel model(mc, 0);
  model.load_checkpoint(args.checkpoint);
  const std::vector<Scene> scenes =
      load_scene_path(args.scenes, mc.horizon, data_opts, attrs);
  if (scenes.empty()) throw DataError("no scenes in '" + args.scenes + "'");

  std::vector<std::string> ids(scenes.size());
  std::vector<PredictionSet> preds(scenes.size());
  parallel_over(scenes.size(), [&](std::size_t i) {
    ids[i] = scenes[i].scene_id;
    preds[i] = model.predict(scenes[i]);
  });

  std::ofstream out(args.out);
  if (!out) throw DataError("cannot write '" + args.out + "'");
  out << predictions_to_json(ids, preds).dump() << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

MetricReport cmd_evaluate(const EvaluateArgs& args) {
  Config cfg = load_config(args.config_path);
  const ModelConfig mc = ModelConfig::from_config(cfg, args.mode);
  const VehicleAttributes attrs = VehicleAttributes::from_config(cfg);
  const DataOptions data_opts = DataOptions::from_config(cfg);

  json parsed;
  try {
    parsed = json::parse(read_file(args.predictions));
  } catch (const json::exception& e) {
    throw DataError(std::string("predictions JSON: ") + e.what());
  }
  std::vector<std::string> ids;
  std::vector<PredictionSet> preds;
  predictions_from_json(parsed, ids, preds);

  const std::vector<Scene> gt =
      load_scene_path(args.ground_truth, mc.horizon, data_opts, attrs);
  const MetricReport report =
      evaluate_predictions(ids, preds, gt, mc.horizon.dt_s);

  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream jout(fs::path(args.out_dir) / "report.json");
    jout << report.to_json() << "\n";
    std::ofstream tout(fs::path(args.out_dir) / "report.txt");
    tout << report.to_table();
    if (args.plot) {
      std::map<std::string, const Scene*> by_id;
      for (const Scene& s : gt) by_id[s.scene_id] = &s;
      fs::create_directories(fs::path(args.out_dir) / "plots");
      for (std::size_t i = 0; i < ids.size(); ++i) {
        std::ofstream svg(fs::path(args.out_dir) / "plots" /
                          (sanitize_filename(ids[i]) + ".svg"));
        svg << scene_overlay_svg(*by_id.at(ids[i]), preds[i]);
      }
    }
  }
  std::cout << report.to_table();
  return report;
}

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(const SimulateArgs& args) {
  if (args.count < 0) throw UsageError("count must be nonnegative");
  if (args.count == 0) return;  // nothing to write
  Config cfg = load_config(args.config_path);
  const HorizonSpec horizon = HorizonSpec::from_config(cfg, args.mode);
  const VehicleAttributes attrs = VehicleAttributes::from_config(cfg);

  static const ScenarioKind kCycle[] = {
      ScenarioKind::Straight, ScenarioKind::LaneChangeLeft,
      ScenarioKind::LaneChangeRight, ScenarioKind::Turn, ScenarioKind::Brake};
  std::vector<Scene> scenes;
  json controls = json::object();
  for (int i = 0; i < args.count; ++i) {
    const ScenarioKind kind =
        args.kind == "mixed" ? kCycle[i % 5] : parse_scenario_kind(args.kind);
    SynthResult r = synth_scenario(kind, args.noise_std,
                                   args.seed + static_cast<std::uint64_t>(i),
                                   attrs, horizon);
    json ctrl_rows = json::array();
    for (const ControlInput& c : r.target_controls)
      ctrl_rows.push_back(
          {c.yaw_rad, c.yaw_rate_radps, c.steer_rad, c.accel_mps2});
    controls[r.scene.scene_id] = ctrl_rows;
    scenes.push_back(std::move(r.scene));
  }

  fs::create_directories(args.out_dir);
  // One combined CSV (loadable by the trajectory parser), the canonical
  // JSON scenes, and the generating controls.
  std::ofstream csv(fs::path(args.out_dir) / "scenes.csv");
  csv << "scene_id,vehicle_id,frame,x,y,vx,vy,is_target\n";
  for (const Scene& s : scenes) {
    std::istringstream lines(scene_to_csv(s));
    std::string line;
    std::getline(lines, line);  // skip per-scene header
    while (std::getline(lines, line)) csv << line << "\n";
  }
  save_scenes_json(scenes, (fs::path(args.out_dir) / "scenes.json").string());
  std::ofstream cj(fs::path(args.out_dir) / "controls.json");
  cj << controls.dump() << "\n";
}

// ---------------------------------------------------------------------------
// verify

namespace {

struct VerifyReport {
  bool all_pass = true;
  void check(const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    all_pass = all_pass && pass;
  }
};

/// Central-difference check over every parameter reachable from `eval`.
/// The test-only fault hook perturbs the first analytic gradient so the
/// failure path of this very suite can be exercised.
double verify_param_grads(ParamStore& store,
                          const std::function<double(bool)>& eval,
                          bool inject_fault) {
  store.zero_grads();
  (void)eval(true);
  std::vector<std::vector<double>> analytic;
  for (auto& p : store)
    analytic.push_back(p->grad.empty() ? std::vector<double>(p->size(), 0.0)
                                       : p->grad);
  if (inject_fault && !analytic.empty() && !analytic[0].empty())
    analytic[0][0] += 0.05;
  store.zero_grads();
  const double eps = 1e-6;
  double worst = 0.0;
  std::size_t pi = 0;
  for (auto& p : store) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double fp = eval(false);
      p->value[i] = saved - eps;
      const double fm = eval(false);
      p->value[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
    ++pi;
  }
  return worst;
}

Scene latency_fixture(const HorizonSpec& horizon,
                      const VehicleAttributes& attrs) {
  // Deterministic highway scene with a full set of 8 surrounding vehicles.
  Scene scene;
  scene.scene_id = "latency_fixture";
  scene.dt_s = horizon.dt_s;
  scene.attrs = attrs;
  const int t_p = horizon.t_p_steps(), t_f = horizon.t_f_steps();
  const auto straight = [&](double x0, double y0, double v) {
    VehicleTrack t;
    for (int i = 0; i < t_p; ++i)
      t.history.push_back({x0 + v * i * horizon.dt_s, y0, v, 0.0});
    for (int i = 0; i < t_f; ++i)
      t.future.push_back(
          {x0 + v * (t_p + i) * horizon.dt_s, y0, v, 0.0});
    return t;
  };
  scene.target = straight(0.0, 0.0, 12.0);
  for (int i = 0; i < 8; ++i)
    scene.surroundings.push_back(
        straight(-20.0 + 6.0 * i, (i % 2 ? 3.5 : -3.5), 9.0 + 0.7 * i));
  return scene;
}

}  // namespace

int cmd_verify(const std::string& config_path) {
  Config cfg = load_config(config_path);
  const VehicleAttributes attrs = VehicleAttributes::from_config(cfg);
  const bool inject =
      std::getenv("DEMO_VERIFY_INJECT") != nullptr &&
      std::string(std::getenv("DEMO_VERIFY_INJECT")) == "gradient";
  VerifyReport report;
  Rng rng(20240811);

  // 1. Dynamics roundtrip.
  {
    const StepSpec spec{0.1};
    int failures = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
      KinematicState s0{rng.uniform(-50, 50), rng.uniform(-50, 50),
                        rng.uniform(1.0, 25.0) * (rng.uniform() < 0.5 ? -1 : 1),
                        rng.uniform(-3, 3)};
      const ControlInput ctrl{rng.uniform(-M_PI, M_PI),
                              rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3),
                              rng.uniform(-6, 6)};
      const KinematicState s1 = discrete_step(s0, ctrl, attrs, spec);
      const ControlInput rec = inverse_controls(s0, s1, attrs, spec);
      const KinematicState s1r = discrete_step(s0, rec, attrs, spec);
      const double dyaw =
          std::remainder(rec.yaw_rad - ctrl.yaw_rad, 2.0 * M_PI);
      if (std::abs(rec.accel_mps2 - ctrl.accel_mps2) > 1e-9 ||
          std::abs(dyaw) > 1e-9 || std::abs(s1r.vy_mps - s1.vy_mps) > 1e-9)
        ++failures;
    }
    report.check("dynamics roundtrip (10k samples)", failures == 0,
                 std::to_string(failures) + " failures");
  }

  // 2. Golden discrete step.
  {
    const KinematicState n = discrete_step({0, 0, 10, 0}, {0, 0.1, 0.05, 0},
                                           VehicleAttributes{}, StepSpec{0.1});
    const bool pass = std::abs(n.vy_mps - 3900.0 / 35000.0) < 1e-12;
    report.check("discrete-step lateral golden", pass,
                 "vy'=" + std::to_string(n.vy_mps));
  }

  // 3. Layer gradient suite.
  {
    double worst = 0.0;
    for (int draw = 0; draw < 10; ++draw) {
      ParamStore store;
      Rng init = rng.fork(static_cast<std::uint64_t>(draw));
      const int d = 4;
      Mlp mlp(store, "mlp", {3, d, 1}, init, Activation::Gelu,
              Activation::None);
      GluLayer glu_l(store, "glu", d, d, init);
      LayerNormLayer ln(store, "ln", d);
      GruCell gru(store, "gru", d, d, init);
      SelectiveSsm ssm(store, "ssm", d, init);
      AttentionHead head(store, "head", 3, d, init);
      TransformerBlock block(store, "block", d, 2 * d, init);
      Param& gcn_w = store.create("gcn.w", {d, d},
                                  uniform_init(d, d * d, init));
      std::vector<double> x3, x4a, x4b, q, k, v;
      for (int i = 0; i < 6; ++i) x3.push_back(init.uniform(-1, 1));
      for (int i = 0; i < 2 * d; ++i) x4a.push_back(init.uniform(-1, 1));
      for (int i = 0; i < 2 * d; ++i) x4b.push_back(init.uniform(-1, 1));
      for (int i = 0; i < 2 * d; ++i) q.push_back(init.uniform(-1, 1));
      for (int i = 0; i < 3 * d; ++i) k.push_back(init.uniform(-1, 1));
      for (int i = 0; i < 3 * d; ++i) v.push_back(init.uniform(-1, 1));
      const auto adj = normalized_adjacency({true, true});
      const auto eval = [&](bool backward) {
        Tape tape;
        const Tensor in3 = tape.constant({2, 3}, x3);
        const Tensor in4 = tape.constant({2, d}, x4a);
        const Tensor h0 = tape.constant({2, d}, x4b);
        Tensor acc = reduce_sum(mlp.forward(tape, in3));
        acc = add(acc, reduce_sum(gelu(glu_l.forward(tape, in4))));
        acc = add(acc, reduce_sum(ln.forward(tape, in4)));
        acc = add(acc, reduce_sum(gru.forward(tape, in4, h0)));
        const std::vector<Tensor> frames = {in4, h0, in4};
        const auto scanned = ssm.forward(tape, frames);
        acc = add(acc, reduce_sum(scanned.back()));
        acc = add(acc, reduce_sum(softmax(in4)));
        acc = add(acc,
                  reduce_sum(head.forward(tape, tape.constant({2, d}, q),
                                          tape.constant({3, d}, k),
                                          tape.constant({3, d}, v),
                                          static_cast<double>(d))));
        acc = add(acc, reduce_sum(graph_conv(tape, in4,
                                             tape.constant({2, 2}, adj),
                                             tape.lease(gcn_w))));
        acc = add(acc, reduce_sum(block.forward(tape, in4)));
        if (backward) tape.backward(acc);
        return acc.scalar();
      };
      worst = std::max(worst,
                       verify_param_grads(store, eval, inject && draw == 0));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max rel err %.3g", worst);
    report.check("layer gradient suite (10 draws)", worst < 1e-4, buf);
  }

  // 4. KL correctness.
  {
    Tape tape;
    GaussianLatent q{tape.constant({1, 1}, {1.0}), tape.constant({1, 1}, {0.0})};
    GaussianLatent p{tape.constant({1, 1}, {0.0}), tape.constant({1, 1}, {0.0})};
    const GaussianLatent qs[] = {q};
    const GaussianLatent ps[] = {p};
    const double v = kl_loss(tape, qs, ps).scalar();
    bool pass = std::abs(v - 0.5) < 1e-12;
    int negatives = 0;
    for (int i = 0; i < 1000; ++i) {
      Tape t2;
      GaussianLatent a{t2.constant({1, 3}, {rng.uniform(-2, 2),
                                            rng.uniform(-2, 2),
                                            rng.uniform(-2, 2)}),
                       t2.constant({1, 3}, {rng.uniform(-2, 2),
                                            rng.uniform(-2, 2),
                                            rng.uniform(-2, 2)})};
      GaussianLatent b{t2.constant({1, 3}, {rng.uniform(-2, 2),
                                            rng.uniform(-2, 2),
                                            rng.uniform(-2, 2)}),
                       t2.constant({1, 3}, {rng.uniform(-2, 2),
                                            rng.uniform(-2, 2),
                                            rng.uniform(-2, 2)})};
      const GaussianLatent as[] = {a};
      const GaussianLatent bs[] = {b};
      if (kl_loss(t2, as, bs).scalar() < -1e-12) ++negatives;
    }
    pass = pass && negatives == 0;
    report.check("closed-form Gaussian KL", pass,
                 "KL(N(1,1)||N(0,1))=" + std::to_string(v));
  }

  // 5. Metric oracles.
  {
    const Trajectory gt = {{0, 0}, {1, 0}};
    std::vector<Trajectory> preds = {{{3, 0}, {4, 0}}, {{0, 4}, {1, 4}}};
    std::vector<Trajectory> gts = {gt, {{0, 0}, {1, 0}}};
    // errors 3 m and 4 m at the final (1 s at dt=0.5) step
    const double rmse = rmse_at(preds, gts, 1, 0.5);
    bool pass = std::abs(rmse - std::sqrt((9.0 + 16.0) / 2.0)) < 1e-4;

    PredictionSet set;
    for (double off : {1.0, 2.0, 3.0})
      set.trajectories.push_back({{off, 0}, {1 + off, 0}});
    set.maneuver_probs = {0.3, 0.2, 0.5};  // probability order: 3m, 1m, 2m
    pass = pass && min_ade(set, gt, 2) == 1.0;

    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      PredictionSet rs;
      const int K = 4;
      for (int kk = 0; kk < K; ++kk) {
        Trajectory t;
        for (int s = 0; s < 3; ++s)
          t.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
        rs.trajectories.push_back(t);
        rs.maneuver_probs.push_back(rng.uniform(0.01, 1.0));
      }
      Trajectory g;
      for (int s = 0; s < 3; ++s)
        g.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
      double prev = 1e30;
      for (int kk = 1; kk <= K; ++kk) {
        const double v = min_ade(rs, g, kk);
        if (v > prev + 1e-12) ++violations;
        prev = v;
      }
    }
    pass = pass && violations == 0;
    report.check("metric oracles and minADE monotonicity", pass,
                 "rmse=" + std::to_string(rmse));
  }

  // 6. Equivariances.
  {
    const HorizonSpec horizon = HorizonSpec::for_mode("highway");
    ModelConfig mc;
    mc.horizon = horizon;
    DemoModel model(mc, 5);
    int worst_scene = -1;
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      SynthResult r = synth_scenario(ScenarioKind::LaneChangeLeft, 0.05,
                                     100 + static_cast<std::uint64_t>(i),
                                     attrs, horizon);
      if (r.scene.surroundings.size() < 2) continue;
      const auto base = model.interaction_features(r.scene);
      Scene permuted = r.scene;
      std::reverse(permuted.surroundings.begin(),
                   permuted.surroundings.end());
      const auto perm = model.interaction_features(permuted);
      const int v = mc.vehicle_slots();
      const int d = mc.d_model;
      const std::size_t n_surr = r.scene.surroundings.size();
      for (std::size_t s = 0; s < n_surr; ++s) {
        const std::size_t src_row = 1 + s;
        const std::size_t dst_row = 1 + (n_surr - 1 - s);
        for (int c = 0; c < d; ++c) {
          const double diff =
              std::abs(base[src_row * static_cast<std::size_t>(d) +
                            static_cast<std::size_t>(c)] -
                       perm[dst_row * static_cast<std::size_t>(d) +
                            static_cast<std::size_t>(c)]);
          if (diff > worst) {
            worst = diff;
            worst_scene = i;
          }
        }
      }
      (void)v;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max row diff %.3g (scene %d)", worst,
                  worst_scene);
    report.check("interaction permutation equivariance", worst < 1e-9, buf);
  }

  // 7. Latency budget.
  {
    const HorizonSpec horizon = HorizonSpec::for_mode("highway");
    ModelConfig mc;
    mc.horizon = horizon;
    DemoModel model(mc, 7);
    const Scene fixture = latency_fixture(horizon, attrs);
    for (int i = 0; i < 3; ++i) (void)model.predict(fixture);  // warmup
    std::vector<double> samples;
    for (int i = 0; i < 10; ++i) {
      const auto t0 = Clock::now();
      (void)model.predict(fixture);
      samples.push_back(
          std::chrono::duration<double, std::milli>(Clock::now() - t0)
              .count());
    }
    std::sort(samples.begin(), samples.end());
    const double median = samples[samples.size() / 2];
    char buf[64];
    std::snprintf(buf, sizeof(buf), "median %.2f ms over 10 runs", median);
    report.check("single-scene inference latency < 50 ms", median < 50.0,
                 buf);
  }

  // 8. Prediction determinism.
  {
    const HorizonSpec horizon = HorizonSpec::for_mode("highway");
    ModelConfig mc;
    mc.horizon = horizon;
    DemoModel model(mc, 11);
    const Scene fixture = latency_fixture(horizon, attrs);
    const PredictionSet a = model.predict(fixture);
    const PredictionSet b = model.predict(fixture);
    bool equal = a.maneuver_probs == b.maneuver_probs;
    for (std::size_t k = 0; equal && k < a.trajectories.size(); ++k)
      equal = a.trajectories[k] == b.trajectories[k];
    report.check("repeated inference bit-identical", equal, "");
  }

  std::cout << (report.all_pass ? "VERIFY: all checks passed"
                                : "VERIFY: FAILURES PRESENT")
            << "\n";
  return report.all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// argument wiring

int run(int argc, const char* const* argv) {
  CLI::App app{"Two-stage multi-horizon vehicle trajectory predictor"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "Train a model on a scene set");
  t->add_option("--config", train.config_path, "Key-value config file");
  t->add_option("--data", train.data_dir, "Directory of .csv/.json scenes")
      ->required();
  t->add_option("--out", train.out_dir, "Run output directory")->required();
  t->add_option("--mode", train.mode, "Dataset mode (highway|nuscenes)");
  t->add_option("--seed", train.seed, "Seed for init, shuffle and sampling");
  t->add_option("--epochs", train.epochs, "Training epochs");
  t->add_option("--batch", train.batch, "Scenes per optimizer step");

  PredictArgs predict;
  CLI::App* p = app.add_subcommand("predict", "Predict futures for scenes");
  p->add_option("--checkpoint", predict.checkpoint, "Model checkpoint")
      ->required();
  p->add_option("--scenes", predict.scenes, "Scene .json or .csv file")
      ->required();
  p->add_option("--out", predict.out, "Predictions JSON path")->required();
  p->add_option("--config", predict.config_path, "Key-value config file");
  p->add_option("--mode", predict.mode, "Dataset mode");

  EvaluateArgs evaluate;
  CLI::App* e = app.add_subcommand("evaluate", "Score predictions");
  e->add_option("--predictions", evaluate.predictions, "Predictions JSON")
      ->required();
  e->add_option("--gt", evaluate.ground_truth, "Ground-truth scenes")
      ->required();
  e->add_option("--out", evaluate.out_dir, "Report output directory");
  e->add_option("--config", evaluate.config_path, "Key-value config file");
  e->add_option("--mode", evaluate.mode, "Dataset mode");
  e->add_flag("--plot", evaluate.plot, "Write per-scene SVG overlays");

  SimulateArgs simulate;
  CLI::App* s = app.add_subcommand("simulate", "Generate synthetic scenes");
  s->add_option("--kind", simulate.kind,
                "straight|lane_change_left|lane_change_right|turn|brake|mixed");
  s->add_option("--count", simulate.count, "Number of scenes")->required();
  s->add_option("--seed", simulate.seed, "Generator seed");
  s->add_option("--out", simulate.out_dir, "Output directory")->required();
  s->add_option("--noise", simulate.noise_std, "Position noise stddev (m)");
  s->add_option("--mode", simulate.mode, "Dataset mode");
  s->add_option("--config", simulate.config_path, "Key-value config file");

  std::string verify_config;
  CLI::App* v = app.add_subcommand("verify", "Run the invariant suite");
  v->add_option("--config", verify_config, "Key-value config file");

  try {
    app.parse(argc, argv);
    if (t->parsed()) cmd_train(train);
    if (p->parsed()) cmd_predict(predict);
    if (e->parsed()) (void)cmd_evaluate(evaluate);
    if (s->parsed()) cmd_simulate(simulate);
    if (v->parsed()) return cmd_verify(verify_config);
    return 0;
  } catch (const CLI::CallForHelp& help) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& pe) {
    std::cerr << "usage error: " << pe.what() << "\n";
    return 1;
  } catch (const UsageError& ue) {
    std::cerr << "usage error: " << ue.what() << "\n";
    return 1;
  } catch (const DataError& de) {
    std::cerr << "data error: " << de.what() << "\n";
    return 2;
  } catch (const NumericError& ne) {
    std::cerr << "numeric error: " << ne.what() << "\n";
    return 3;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
}

}  // namespace demo::cli
