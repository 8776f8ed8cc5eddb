#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "demo/config.hpp"
#include "demo/dynamics.hpp"
#include "demo/rng.hpp"

namespace demo {

struct HorizonSpec {
  double t_p_s = 3.0;
  double t_f_s = 5.0;
  double t_s_s = 2.0;
  double dt_s = 0.2;

  int t_p_steps() const;
  int t_f_steps() const;
  int t_s_steps() const;

  /// highway: 3 s past / 5 s future at 0.2 s; nuscenes: 2 s / 6 s at 0.5 s.
  static HorizonSpec for_mode(const std::string& mode);
  static HorizonSpec from_config(const Config& cfg, const std::string& mode);
  void validate() const;
};

using Polyline = std::vector<std::array<double, 2>>;

/// Target vehicle plus up to n_max surrounding vehicles, all covering the
/// full history window; vehicles also covering the future window carry it
/// (the target always does in training scenes).
struct VehicleTrack {
  std::vector<KinematicState> history;  // exactly t_p_steps
  std::vector<KinematicState> future;   // t_f_steps, or empty
};

struct Scene {
  std::string scene_id;
  double dt_s = 0.2;
  VehicleTrack target;
  std::vector<VehicleTrack> surroundings;  // present vehicles only
  std::vector<Polyline> map_polylines;
  VehicleAttributes attrs;
};

struct DataOptions {
  int n_max = 8;  // nearest surrounding vehicles kept
  int window_stride = 0;  // 0: one full window length (non-overlapping)

  static DataOptions from_config(const Config& cfg);
};

/// CSV schema: header `scene_id,vehicle_id,frame,x,y,vx,vy,is_target`,
/// comma-separated, '.' decimal, frame spacing equal to horizon.dt_s. The
/// vx/vy columns may be omitted, in which case velocities are recovered by
/// central differences of the positions.
std::vector<Scene> load_trajectory_csv(const std::string& path,
                                       const HorizonSpec& horizon,
                                       const DataOptions& opts = {},
                                       const VehicleAttributes& attrs = {});

std::string write_scene_json(const Scene& scene);
Scene read_scene_json(const std::string& text);
void save_scenes_json(const std::vector<Scene>& scenes,
                      const std::string& path);
std::vector<Scene> load_scenes_json(const std::string& path);

/// Write a scene back out in the trajectory CSV schema (with velocities).
std::string scene_to_csv(const Scene& scene);

enum class ScenarioKind { Straight, LaneChangeLeft, LaneChangeRight, Turn,
                          Brake };
ScenarioKind parse_scenario_kind(const std::string& s);
std::string scenario_kind_name(ScenarioKind k);

struct SynthResult {
  Scene scene;
  /// The exact control sequence that generated the target's trajectory
  /// (history + future, length t_p_steps + t_f_steps - 1).
  std::vector<ControlInput> target_controls;
};

/// Roll the discrete dynamics under a parameterized control profile.
/// Observation noise (positions only) is N(0, noise_std^2). A fixed seed
/// reproduces the scene bit-identically.
SynthResult synth_scenario(ScenarioKind kind, double noise_std,
                           std::uint64_t seed, const VehicleAttributes& attrs,
                           const HorizonSpec& horizon);

struct SplitResult {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
};

/// Deterministic shuffle by seed, then a disjoint cover by the ratios.
SplitResult split(std::vector<Scene> scenes, std::array<double, 3> ratios,
                  std::uint64_t seed);

/// Arc-length uniform resampling of a polyline to `points` vertices.
Polyline resample_polyline(const Polyline& line, int points);

}  // namespace demo
