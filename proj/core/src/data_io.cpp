#include "demo/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace demo {

namespace {

int steps_of(double span_s, double dt_s, const char* what) {
  const double raw = span_s / dt_s;
  const int steps = static_cast<int>(std::llround(raw));
  if (steps <= 0 || std::abs(steps * dt_s - span_s) > 1e-9)
    throw UsageError(std::string(what) +
                     " must be a positive multiple of dt_s");
  return steps;
}

}  // namespace

int HorizonSpec::t_p_steps() const { return steps_of(t_p_s, dt_s, "t_p_s"); }
int HorizonSpec::t_f_steps() const { return steps_of(t_f_s, dt_s, "t_f_s"); }
int HorizonSpec::t_s_steps() const { return steps_of(t_s_s, dt_s, "t_s_s"); }

HorizonSpec HorizonSpec::for_mode(const std::string& mode) {
  HorizonSpec h;
  if (mode == "highway") {
    h.t_p_s = 3.0;
    h.t_f_s = 5.0;
    h.t_s_s = 2.0;
    h.dt_s = 0.2;
  } else if (mode == "nuscenes") {
    h.t_p_s = 2.0;
    h.t_f_s = 6.0;
    h.t_s_s = 2.0;
    h.dt_s = 0.5;
  } else {
    throw ModeUnknown(mode);
  }
  return h;
}

HorizonSpec HorizonSpec::from_config(const Config& cfg,
                                     const std::string& mode) {
  HorizonSpec h = for_mode(mode);
  h.t_p_s = cfg.get_double("horizon.t_p_s", h.t_p_s);
  h.t_f_s = cfg.get_double("horizon.t_f_s", h.t_f_s);
  h.t_s_s = cfg.get_double("horizon.t_s_s", h.t_s_s);
  h.dt_s = cfg.get_double("horizon.dt_s", h.dt_s);
  h.validate();
  return h;
}

void HorizonSpec::validate() const {
  if (!(dt_s > 0.0) || dt_s > 1.0) throw UsageError("dt_s must be in (0, 1]");
  if (t_s_s > t_f_s + 1e-12)
    throw UsageError("t_s_s must not exceed t_f_s");
  (void)t_p_steps();
  (void)t_f_steps();
  (void)t_s_steps();
}

DataOptions DataOptions::from_config(const Config& cfg) {
  DataOptions o;
  o.n_max = cfg.get_int("data.n_max", o.n_max);
  o.window_stride = cfg.get_int("data.window_stride", o.window_stride);
  return o;
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

struct RawSample {
  long frame;
  double x, y, vx, vy;
  bool has_velocity;
};

struct RawTrack {
  std::map<long, RawSample> by_frame;
  bool is_target = false;
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw MalformedRow(line_no, "bad number '" + s + "'");
  }
}

/// Fill missing velocities by central differences of positions (one-sided
/// at the track ends).
void recover_velocities(std::vector<RawSample>& samples, double dt) {
  const std::size_t n = samples.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].has_velocity) continue;
    const std::size_t lo = (i == 0) ? 0 : i - 1;
    const std::size_t hi = (i + 1 == n) ? i : i + 1;
    const double span = static_cast<double>(hi - lo) * dt;
    if (span <= 0.0) {
      samples[i].vx = samples[i].vy = 0.0;
    } else {
      samples[i].vx = (samples[hi].x - samples[lo].x) / span;
      samples[i].vy = (samples[hi].y - samples[lo].y) / span;
    }
    samples[i].has_velocity = true;
  }
}

}  // namespace

std::vector<Scene> load_trajectory_csv(const std::string& path,
                                       const HorizonSpec& horizon,
                                       const DataOptions& opts,
                                       const VehicleAttributes& attrs) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return {};
  ++line_no;
  const auto header = split_fields(line);
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int c_scene = col("scene_id"), c_vehicle = col("vehicle_id"),
            c_frame = col("frame"), c_x = col("x"), c_y = col("y"),
            c_vx = col("vx"), c_vy = col("vy"), c_target = col("is_target");
  if (c_scene < 0 || c_vehicle < 0 || c_frame < 0 || c_x < 0 || c_y < 0 ||
      c_target < 0)
    throw MalformedRow(1, "missing required header columns");

  // scene_id -> vehicle_id -> track
  std::map<std::string, std::map<std::string, RawTrack>> data;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size())
      throw MalformedRow(line_no, "expected " +
                                      std::to_string(header.size()) +
                                      " fields, got " +
                                      std::to_string(f.size()));
    RawSample s{};
    s.frame = static_cast<long>(parse_double(f[c_frame], line_no));
    s.x = parse_double(f[c_x], line_no);
    s.y = parse_double(f[c_y], line_no);
    s.has_velocity = c_vx >= 0 && c_vy >= 0 && !f[c_vx].empty() &&
                     !f[c_vy].empty();
    if (s.has_velocity) {
      s.vx = parse_double(f[c_vx], line_no);
      s.vy = parse_double(f[c_vy], line_no);
    }
    RawTrack& track = data[f[c_scene]][f[c_vehicle]];
    track.by_frame[s.frame] = s;
    if (parse_double(f[c_target], line_no) != 0.0) track.is_target = true;
  }

  const int t_p = horizon.t_p_steps();
  const int t_f = horizon.t_f_steps();
  const int window = t_p + t_f;
  const int stride = opts.window_stride > 0 ? opts.window_stride : window;

  std::vector<Scene> scenes;
  for (auto& [scene_id, tracks] : data) {
    const RawTrack* target = nullptr;
    for (auto& [vid, track] : tracks) {
      // Frames of one vehicle must be consecutive.
      long prev = 0;
      bool first = true;
      for (auto& [frame, sample] : track.by_frame) {
        if (!first && frame != prev + 1) throw IrregularTimestep(scene_id);
        prev = frame;
        first = false;
      }
      if (track.is_target) {
        if (target) throw MissingTarget(scene_id + "' (multiple targets)");
        target = &track;
      }
    }
    if (!target) throw MissingTarget(scene_id);

    // Per-vehicle contiguous sample arrays with recovered velocities.
    std::map<const RawTrack*, std::pair<long, std::vector<RawSample>>> dense;
    for (auto& [vid, track] : tracks) {
      std::vector<RawSample> samples;
      samples.reserve(track.by_frame.size());
      for (auto& [frame, sample] : track.by_frame) samples.push_back(sample);
      recover_velocities(samples, horizon.dt_s);
      dense[&track] = {track.by_frame.begin()->first, std::move(samples)};
    }

    const auto& [t_first, t_samples] = dense[target];
    auto state_at = [](const RawSample& s) {
      return KinematicState{s.x, s.y, s.vx, s.vy};
    };

    for (long start = 0;
         start + window <= static_cast<long>(t_samples.size());
         start += stride) {
      Scene scene;
      scene.scene_id = scene_id + "#" + std::to_string(t_first + start);
      scene.dt_s = horizon.dt_s;
      scene.attrs = attrs;
      for (int i = 0; i < t_p; ++i)
        scene.target.history.push_back(state_at(t_samples[start + i]));
      for (int i = 0; i < t_f; ++i)
        scene.target.future.push_back(state_at(t_samples[start + t_p + i]));

      const double ref_x = scene.target.history.back().x_m;
      const double ref_y = scene.target.history.back().y_m;
      const long hist_first = t_first + start;
      std::vector<std::pair<double, VehicleTrack>> candidates;
      for (auto& [vid, track] : tracks) {
        if (&track == target) continue;
        const auto& [v_first, v_samples] = dense[&track];
        const long off = hist_first - v_first;
        // Keep vehicles that cover the full history window.
        if (off < 0 ||
            off + t_p > static_cast<long>(v_samples.size()))
          continue;
        VehicleTrack vt;
        for (int i = 0; i < t_p; ++i)
          vt.history.push_back(state_at(v_samples[off + i]));
        if (off + window <= static_cast<long>(v_samples.size()))
          for (int i = 0; i < t_f; ++i)
            vt.future.push_back(state_at(v_samples[off + t_p + i]));
        const double d = std::hypot(vt.history.back().x_m - ref_x,
                                    vt.history.back().y_m - ref_y);
        candidates.emplace_back(d, std::move(vt));
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const auto& a, const auto& b) {
                         return a.first < b.first;
                       });
      for (std::size_t i = 0;
           i < candidates.size() && i < static_cast<std::size_t>(opts.n_max);
           ++i)
        scene.surroundings.push_back(std::move(candidates[i].second));
      scenes.push_back(std::move(scene));
    }
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

json states_to_json(const std::vector<KinematicState>& states) {
  json arr = json::array();
  for (const KinematicState& s : states)
    arr.push_back({s.x_m, s.y_m, s.vx_mps, s.vy_mps});
  return arr;
}

std::vector<KinematicState> states_from_json(const json& arr) {
  std::vector<KinematicState> out;
  for (const auto& row : arr) {
    if (!row.is_array() || row.size() != 4)
      throw DataError("scene JSON: state rows must be [x,y,vx,vy]");
    out.push_back({row[0].get<double>(), row[1].get<double>(),
                   row[2].get<double>(), row[3].get<double>()});
  }
  return out;
}

json scene_to_json(const Scene& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["dt_s"] = s.dt_s;
  j["attrs"] = {{"mass_kg", s.attrs.mass_kg},
                {"yaw_inertia_kg_m2", s.attrs.yaw_inertia_kg_m2},
                {"dist_cg_front_m", s.attrs.dist_cg_front_m},
                {"dist_cg_rear_m", s.attrs.dist_cg_rear_m},
                {"cornering_stiffness_front_N_per_rad",
                 s.attrs.cornering_stiffness_front_N_per_rad},
                {"cornering_stiffness_rear_N_per_rad",
                 s.attrs.cornering_stiffness_rear_N_per_rad}};
  j["target"] = {{"history", states_to_json(s.target.history)},
                 {"future", states_to_json(s.target.future)}};
  json surr = json::array();
  for (const VehicleTrack& v : s.surroundings)
    surr.push_back({{"history", states_to_json(v.history)},
                    {"future", states_to_json(v.future)}});
  j["surroundings"] = surr;
  json polys = json::array();
  for (const Polyline& p : s.map_polylines) {
    json line = json::array();
    for (const auto& pt : p) line.push_back({pt[0], pt[1]});
    polys.push_back(line);
  }
  j["map_polylines"] = polys;
  return j;
}

Scene scene_from_json(const json& j) {
  Scene s;
  try {
    s.scene_id = j.at("scene_id").get<std::string>();
    s.dt_s = j.at("dt_s").get<double>();
    const json& a = j.at("attrs");
    s.attrs.mass_kg = a.at("mass_kg").get<double>();
    s.attrs.yaw_inertia_kg_m2 = a.at("yaw_inertia_kg_m2").get<double>();
    s.attrs.dist_cg_front_m = a.at("dist_cg_front_m").get<double>();
    s.attrs.dist_cg_rear_m = a.at("dist_cg_rear_m").get<double>();
    s.attrs.cornering_stiffness_front_N_per_rad =
        a.at("cornering_stiffness_front_N_per_rad").get<double>();
    s.attrs.cornering_stiffness_rear_N_per_rad =
        a.at("cornering_stiffness_rear_N_per_rad").get<double>();
    s.target.history = states_from_json(j.at("target").at("history"));
    s.target.future = states_from_json(j.at("target").at("future"));
    for (const auto& v : j.at("surroundings")) {
      VehicleTrack vt;
      vt.history = states_from_json(v.at("history"));
      vt.future = states_from_json(v.at("future"));
      s.surroundings.push_back(std::move(vt));
    }
    for (const auto& p : j.at("map_polylines")) {
      Polyline line;
      for (const auto& pt : p)
        line.push_back({pt[0].get<double>(), pt[1].get<double>()});
      s.map_polylines.push_back(std::move(line));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("scene JSON: ") + e.what());
  }
  return s;
}

}  // namespace

std::string write_scene_json(const Scene& scene) {
  return scene_to_json(scene).dump();
}

Scene read_scene_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("scene JSON parse: ") + e.what());
  }
  return scene_from_json(j);
}

void save_scenes_json(const std::vector<Scene>& scenes,
                      const std::string& path) {
  json arr = json::array();
  for (const Scene& s : scenes) arr.push_back(scene_to_json(s));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << arr.dump() << "\n";
}

std::vector<Scene> load_scenes_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw DataError(std::string("scene JSON parse: ") + e.what());
  }
  if (!arr.is_array()) throw DataError("scene file must be a JSON array");
  std::vector<Scene> out;
  for (const auto& j : arr) out.push_back(scene_from_json(j));
  return out;
}

std::string scene_to_csv(const Scene& scene) {
  std::ostringstream out;
  out.precision(17);
  out << "scene_id,vehicle_id,frame,x,y,vx,vy,is_target\n";
  auto emit = [&](const std::string& vid, int frame, const KinematicState& s,
                  bool is_target) {
    out << scene.scene_id << ',' << vid << ',' << frame << ',' << s.x_m << ','
        << s.y_m << ',' << s.vx_mps << ',' << s.vy_mps << ','
        << (is_target ? 1 : 0) << '\n';
  };
  auto emit_track = [&](const std::string& vid, const VehicleTrack& t,
                        bool is_target) {
    int frame = 0;
    for (const KinematicState& s : t.history) emit(vid, frame++, s, is_target);
    for (const KinematicState& s : t.future) emit(vid, frame++, s, is_target);
  };
  emit_track("0", scene.target, true);
  for (std::size_t i = 0; i < scene.surroundings.size(); ++i)
    emit_track(std::to_string(i + 1), scene.surroundings[i], false);
  return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "straight") return ScenarioKind::Straight;
  if (s == "lane_change_left") return ScenarioKind::LaneChangeLeft;
  if (s == "lane_change_right") return ScenarioKind::LaneChangeRight;
  if (s == "turn") return ScenarioKind::Turn;
  if (s == "brake") return ScenarioKind::Brake;
  throw UsageError("unknown scenario kind '" + s + "'");
}

std::string scenario_kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Straight: return "straight";
    case ScenarioKind::LaneChangeLeft: return "lane_change_left";
    case ScenarioKind::LaneChangeRight: return "lane_change_right";
    case ScenarioKind::Turn: return "turn";
    case ScenarioKind::Brake: return "brake";
  }
  throw UsageError("bad scenario kind");
}

namespace {

std::vector<ControlInput> target_profile(ScenarioKind kind, double vx0,
                                         const HorizonSpec& h, Rng& rng) {
  const int t_p = h.t_p_steps();
  const int t_f = h.t_f_steps();
  const int n = t_p + t_f - 1;
  std::vector<ControlInput> ctrl(static_cast<std::size_t>(n));

  switch (kind) {
    case ScenarioKind::Straight:
      break;
    case ScenarioKind::LaneChangeLeft:
    case ScenarioKind::LaneChangeRight: {
      const double sign = kind == ScenarioKind::LaneChangeLeft ? 1.0 : -1.0;
      const double start_s = t_p * h.dt_s + 0.2;
      const double dur_s = std::min(4.0, h.t_f_s - 0.6);
      // One-lane shift of ~3.7 m: integrated sin(yaw) over the bump.
      const double yaw_max = 2.0 * 3.7 / (vx0 * dur_s);
      for (int i = 0; i < n; ++i) {
        const double t = i * h.dt_s;
        const double tau = t - start_s;
        if (tau < 0.0 || tau > dur_s) continue;
        const double s = std::sin(M_PI * tau / dur_s);
        ctrl[static_cast<std::size_t>(i)].yaw_rad = sign * yaw_max * s * s;
        ctrl[static_cast<std::size_t>(i)].yaw_rate_radps =
            sign * yaw_max * M_PI / dur_s * std::sin(2.0 * M_PI * tau / dur_s);
      }
      break;
    }
    case ScenarioKind::Turn: {
      const double omega = (rng.uniform() < 0.5 ? 1.0 : -1.0) *
                           rng.uniform(0.05, 0.10);
      for (int i = 0; i < n; ++i) {
        ctrl[static_cast<std::size_t>(i)].yaw_rad = omega * i * h.dt_s;
        ctrl[static_cast<std::size_t>(i)].yaw_rate_radps = omega;
      }
      break;
    }
    case ScenarioKind::Brake: {
      const double decel = -rng.uniform(1.6, 2.2);
      const double stop_s = std::min(3.0, h.t_f_s);
      for (int i = 0; i < n; ++i) {
        const double t = i * h.dt_s;
        const double tau = t - t_p * h.dt_s;
        if (tau >= 0.0 && tau < stop_s)
          ctrl[static_cast<std::size_t>(i)].accel_mps2 = decel;
      }
      break;
    }
  }
  return ctrl;
}

VehicleTrack rollout_track(const KinematicState& initial,
                           std::span<const ControlInput> ctrl,
                           const VehicleAttributes& attrs, double dt, int t_p,
                           int t_f) {
  StepSpec spec{dt};
  std::vector<KinematicState> states;
  states.push_back(initial);
  const auto rolled = rollout(initial, ctrl, attrs, spec);
  states.insert(states.end(), rolled.begin(), rolled.end());
  VehicleTrack out;
  out.history.assign(states.begin(), states.begin() + t_p);
  out.future.assign(states.begin() + t_p, states.begin() + t_p + t_f);
  return out;
}

void add_position_noise(VehicleTrack& t, double noise_std, Rng& rng) {
  if (noise_std <= 0.0) return;
  for (auto* part : {&t.history, &t.future})
    for (KinematicState& s : *part) {
      s.x_m += rng.normal(0.0, noise_std);
      s.y_m += rng.normal(0.0, noise_std);
    }
}

}  // namespace

SynthResult synth_scenario(ScenarioKind kind, double noise_std,
                           std::uint64_t seed, const VehicleAttributes& attrs,
                           const HorizonSpec& horizon) {
  Rng rng(seed ^ 0xd155c0de);
  const int t_p = horizon.t_p_steps();
  const int t_f = horizon.t_f_steps();

  SynthResult out;
  out.scene.scene_id =
      scenario_kind_name(kind) + "_" + std::to_string(seed);
  out.scene.dt_s = horizon.dt_s;
  out.scene.attrs = attrs;

  const double vx0 = rng.uniform(9.0, 13.0);
  KinematicState init{0.0, 0.0, vx0, 0.0};
  out.target_controls = target_profile(kind, vx0, horizon, rng);
  out.scene.target = rollout_track(init, out.target_controls, attrs,
                                   horizon.dt_s, t_p, t_f);

  const int n_surround = static_cast<int>(rng.uniform_int(2, 5));
  const double lanes[4] = {-7.0, -3.5, 3.5, 7.0};
  for (int i = 0; i < n_surround; ++i) {
    KinematicState s0{rng.uniform(-25.0, 25.0), lanes[i % 4],
                      rng.uniform(8.0, 14.0), 0.0};
    std::vector<ControlInput> zero(
        static_cast<std::size_t>(t_p + t_f - 1));
    out.scene.surroundings.push_back(
        rollout_track(s0, zero, attrs, horizon.dt_s, t_p, t_f));
  }

  add_position_noise(out.scene.target, noise_std, rng);
  for (VehicleTrack& v : out.scene.surroundings)
    add_position_noise(v, noise_std, rng);
  return out;
}

SplitResult split(std::vector<Scene> scenes, std::array<double, 3> ratios,
                  std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw BadRatios();
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw BadRatios();

  Rng rng(seed);
  // Fisher-Yates with the portable RNG.
  for (std::size_t i = scenes.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(scenes[i - 1], scenes[j]);
  }
  const auto n = static_cast<long>(scenes.size());
  const long n_train = std::lround(ratios[0] * n);
  const long n_val =
      std::min<long>(n - n_train, std::lround(ratios[1] * n));
  SplitResult out;
  for (long i = 0; i < n; ++i) {
    if (i < n_train)
      out.train.push_back(std::move(scenes[static_cast<std::size_t>(i)]));
    else if (i < n_train + n_val)
      out.val.push_back(std::move(scenes[static_cast<std::size_t>(i)]));
    else
      out.test.push_back(std::move(scenes[static_cast<std::size_t>(i)]));
  }
  return out;
}

Polyline resample_polyline(const Polyline& line, int points) {
  if (line.empty()) throw DataError("cannot resample an empty polyline");
  if (points < 2 || line.size() == 1)
    return Polyline(static_cast<std::size_t>(std::max(points, 1)),
                    line.front());
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < line.size(); ++i)
    cum.push_back(cum.back() + std::hypot(line[i][0] - line[i - 1][0],
                                          line[i][1] - line[i - 1][1]));
  const double total = cum.back();
  Polyline out;
  out.reserve(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    const double target = total * k / (points - 1);
    std::size_t seg = 1;
    while (seg + 1 < cum.size() && cum[seg] < target) ++seg;
    const double seg_len = cum[seg] - cum[seg - 1];
    const double alpha = seg_len > 0.0 ? (target - cum[seg - 1]) / seg_len
                                       : 0.0;
    out.push_back({line[seg - 1][0] + alpha * (line[seg][0] - line[seg - 1][0]),
                   line[seg - 1][1] +
                       alpha * (line[seg][1] - line[seg - 1][1])});
  }
  return out;
}

}  // namespace demo
