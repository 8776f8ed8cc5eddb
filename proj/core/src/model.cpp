#include "demo/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace demo {

ModelConfig ModelConfig::from_config(const Config& cfg,
                                     const std::string& mode) {
  ModelConfig m;
  m.mode = parse_dataset_mode(mode);
  m.horizon = HorizonSpec::from_config(cfg, mode);
  m.d_model = cfg.get_int("model.d_model", m.d_model);
  m.z_dim = cfg.get_int("model.z_dim", m.z_dim);
  m.fusion_blocks = cfg.get_int("model.fusion_blocks", m.fusion_blocks);
  m.fusion_heads = cfg.get_int("model.fusion_heads", m.fusion_heads);
  m.ffn_hidden = cfg.get_int("model.ffn_hidden", m.ffn_hidden);
  m.n_max = cfg.get_int("data.n_max", m.n_max);
  m.map_slots = cfg.get_int("model.map_slots", m.map_slots);
  m.map_points = cfg.get_int("model.map_points", m.map_points);
  m.steer_limit = cfg.get_double("dynamics.steer_limit", m.steer_limit);
  m.accel_limit = cfg.get_double("dynamics.accel_limit", m.accel_limit);
  m.v_min_floor = cfg.get_double("dynamics.v_min_floor", m.v_min_floor);
  m.graph_radius_m = cfg.get_double("graph.radius_m", m.graph_radius_m);
  m.weights = LossWeights::from_config(cfg);
  return m;
}

namespace {

DynStageConfig dyn_config(const ModelConfig& m) {
  DynStageConfig d;
  d.t_p_steps = m.horizon.t_p_steps();
  d.t_s_steps = m.horizon.t_s_steps();
  d.d_model = m.d_model;
  d.z_dim = m.z_dim;
  d.steer_limit = m.steer_limit;
  d.accel_limit = m.accel_limit;
  d.v_min_floor = m.v_min_floor;
  return d;
}

InteractionConfig interaction_config(const ModelConfig& m) {
  InteractionConfig i;
  i.d_model = m.d_model;
  i.fusion_blocks = m.fusion_blocks;
  i.fusion_heads = m.fusion_heads;
  i.vehicle_slots = m.vehicle_slots();
  i.map_slots = m.map_slots;
  i.use_map = m.use_map();
  i.ffn_hidden = m.ffn_hidden;
  i.map_points = m.map_points;
  return i;
}

DecoderConfig decoder_config(const ModelConfig& m) {
  DecoderConfig d;
  d.d_model = m.d_model;
  d.t_f_steps = m.horizon.t_f_steps();
  return d;
}

Rng make_init_rng(std::uint64_t seed) { return Rng(seed * 2654435761u + 1); }

}  // namespace

DemoModel::DemoModel(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  Rng rng = make_init_rng(init_seed);
  dyn_ = DynStage(store_, dyn_config(cfg_), rng);
  interaction_ = InteractionStage(store_, interaction_config(cfg_), rng);
  decoder_ = MultiModalDecoder(store_, decoder_config(cfg_), rng);
}

// ---------------------------------------------------------------------------
// Scene preparation: everything becomes anchor-relative constants with
// fixed-size vehicle/map slots plus masks.

struct DemoModel::ScenePrep {
  double anchor_x = 0.0;
  double anchor_y = 0.0;
  std::vector<Tensor> hist_frames;      // t_p frames [V, 4]
  Tensor hist_flat;                     // [V, t_p*4]
  Tensor last_state;                    // [V, 4]
  std::vector<Tensor> teacher_future;   // t_s frames [V, 4]
  Tensor dyn_mask;                      // [V, 1] rows with usable futures
  Tensor gt_future;                     // [t_f, 2] target, anchor-relative
  Maneuver gt_maneuver;
  Tensor map_tokens;                    // [P, points*2]
  SceneMasks masks;
};

DemoModel::ScenePrep DemoModel::prepare(Tape& tape, const Scene& scene,
                                        bool need_future) const {
  const int v = cfg_.vehicle_slots();
  const int t_p = cfg_.horizon.t_p_steps();
  const int t_s = cfg_.horizon.t_s_steps();
  const int t_f = cfg_.horizon.t_f_steps();

  if (static_cast<int>(scene.target.history.size()) != t_p)
    throw WrongHistoryLength(scene.target.history.size(),
                             static_cast<std::size_t>(t_p));
  if (need_future && static_cast<int>(scene.target.future.size()) != t_f)
    throw LengthMismatch("scene '" + scene.scene_id + "' future has " +
                         std::to_string(scene.target.future.size()) +
                         " steps, expected " + std::to_string(t_f));

  ScenePrep prep;
  prep.anchor_x = scene.target.history.back().x_m;
  prep.anchor_y = scene.target.history.back().y_m;

  const auto track_at = [&](int slot) -> const VehicleTrack* {
    if (slot == 0) return &scene.target;
    const std::size_t i = static_cast<std::size_t>(slot) - 1;
    return i < scene.surroundings.size() ? &scene.surroundings[i] : nullptr;
  };
  const auto rel = [&](const KinematicState& s) {
    return std::array<double, 4>{s.x_m - prep.anchor_x, s.y_m - prep.anchor_y,
                                 s.vx_mps, s.vy_mps};
  };

  std::vector<double> presence(static_cast<std::size_t>(v), 0.0);
  std::vector<double> has_future(static_cast<std::size_t>(v), 0.0);
  for (int slot = 0; slot < v; ++slot) {
    const VehicleTrack* t = track_at(slot);
    if (!t) continue;
    presence[static_cast<std::size_t>(slot)] = 1.0;
    if (static_cast<int>(t->future.size()) >= t_s)
      has_future[static_cast<std::size_t>(slot)] = 1.0;
  }

  // History frames, [V, 4] per step. Absent slots hold a neutral state; all
  // downstream reads are masked.
  for (int step = 0; step < t_p; ++step) {
    std::vector<double> frame(static_cast<std::size_t>(v) * 4, 0.0);
    for (int slot = 0; slot < v; ++slot) {
      const VehicleTrack* t = track_at(slot);
      const std::array<double, 4> row =
          t ? rel(t->history[static_cast<std::size_t>(step)])
            : std::array<double, 4>{0.0, 0.0, 10.0, 0.0};
      for (int c = 0; c < 4; ++c)
        frame[static_cast<std::size_t>(slot) * 4 + c] = row[static_cast<std::size_t>(c)];
    }
    prep.hist_frames.push_back(tape.constant({v, 4}, std::move(frame)));
  }
  prep.hist_flat = concat_cols(prep.hist_frames);
  prep.last_state = prep.hist_frames.back();

  if (need_future) {
    for (int step = 0; step < t_s; ++step) {
      std::vector<double> frame(static_cast<std::size_t>(v) * 4, 0.0);
      for (int slot = 0; slot < v; ++slot) {
        const VehicleTrack* t = track_at(slot);
        std::array<double, 4> row{0.0, 0.0, 10.0, 0.0};
        if (t) {
          row = static_cast<int>(t->future.size()) > step
                    ? rel(t->future[static_cast<std::size_t>(step)])
                    : rel(t->history.back());
        }
        for (int c = 0; c < 4; ++c)
          frame[static_cast<std::size_t>(slot) * 4 + c] = row[static_cast<std::size_t>(c)];
      }
      prep.teacher_future.push_back(tape.constant({v, 4}, std::move(frame)));
    }

    std::vector<double> gt(static_cast<std::size_t>(t_f) * 2);
    for (int step = 0; step < t_f; ++step) {
      gt[static_cast<std::size_t>(step) * 2] =
          scene.target.future[static_cast<std::size_t>(step)].x_m - prep.anchor_x;
      gt[static_cast<std::size_t>(step) * 2 + 1] =
          scene.target.future[static_cast<std::size_t>(step)].y_m - prep.anchor_y;
    }
    prep.gt_future = tape.constant({t_f, 2}, std::move(gt));
    prep.gt_maneuver = label_maneuver(scene.target.history.back(),
                                      scene.target.future, scene.dt_s);
  }
  prep.dyn_mask = tape.constant({v, 1}, std::move(has_future));

  // Interaction masks and the vehicle graph.
  prep.masks.vehicle_col = tape.constant({v, 1}, presence);
  std::vector<double> vattn(static_cast<std::size_t>(v) * v, 0.0);
  for (int i = 0; i < v; ++i)
    for (int j = 0; j < v; ++j)
      if (presence[static_cast<std::size_t>(j)] == 0.0)
        vattn[static_cast<std::size_t>(i) * v + j] = -1e30;
  prep.masks.vehicle_attn = tape.constant({v, v}, std::move(vattn));

  std::vector<bool> connected(static_cast<std::size_t>(v), false);
  connected[0] = true;
  for (int slot = 1; slot < v; ++slot) {
    const VehicleTrack* t = track_at(slot);
    if (!t) continue;
    const double d = std::hypot(t->history.back().x_m - prep.anchor_x,
                                t->history.back().y_m - prep.anchor_y);
    connected[static_cast<std::size_t>(slot)] = d <= cfg_.graph_radius_m;
  }
  prep.masks.norm_adj = tape.constant({v, v}, normalized_adjacency(connected));

  if (cfg_.use_map()) {
    const int p = cfg_.map_slots;
    std::vector<double> tokens(
        static_cast<std::size_t>(p) * cfg_.map_points * 2, 0.0);
    std::vector<double> map_present(static_cast<std::size_t>(p), 0.0);
    const int n_lines = std::min<int>(
        p, static_cast<int>(scene.map_polylines.size()));
    for (int i = 0; i < n_lines; ++i) {
      const Polyline pts =
          resample_polyline(scene.map_polylines[static_cast<std::size_t>(i)],
                            cfg_.map_points);
      for (int q = 0; q < cfg_.map_points; ++q) {
        tokens[(static_cast<std::size_t>(i) * cfg_.map_points + q) * 2] =
            pts[static_cast<std::size_t>(q)][0] - prep.anchor_x;
        tokens[(static_cast<std::size_t>(i) * cfg_.map_points + q) * 2 + 1] =
            pts[static_cast<std::size_t>(q)][1] - prep.anchor_y;
      }
      map_present[static_cast<std::size_t>(i)] = 1.0;
    }
    const double total =
        std::max(1.0, std::accumulate(map_present.begin(), map_present.end(),
                                      0.0));
    std::vector<double> pool(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i)
      pool[static_cast<std::size_t>(i)] =
          map_present[static_cast<std::size_t>(i)] / total;
    std::vector<double> mattn(static_cast<std::size_t>(v) * p, 0.0);
    for (int i = 0; i < v; ++i)
      for (int j = 0; j < p; ++j)
        if (map_present[static_cast<std::size_t>(j)] == 0.0)
          mattn[static_cast<std::size_t>(i) * p + j] = -1e30;
    prep.map_tokens = tape.constant(
        {p, cfg_.map_points * 2},
        std::move(tokens));
    prep.masks.map_attn = tape.constant({v, p}, std::move(mattn));
    prep.masks.map_pool = tape.constant({1, p}, std::move(pool));
  }
  return prep;
}

Tensor DemoModel::interaction_forward(Tape& tape, const ScenePrep& prep,
                                      const DynStageOutput& rollout) const {
  std::vector<Tensor> frames = prep.hist_frames;
  frames.insert(frames.end(), rollout.short_traj.begin(),
                rollout.short_traj.end());
  const std::vector<Tensor> f_v =
      interaction_.temporal_encode(tape, frames, prep.masks.vehicle_col);

  FeatureBundle bundle;
  bundle.vehicle_frames = f_v;
  bundle.dyn_feats = mul_colvec(rollout.dyn_features, prep.masks.vehicle_col);
  if (cfg_.use_map() && prep.map_tokens.defined()) {
    // The pool weights double as the presence mask column source.
    std::vector<double> mask_col;
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.map_slots); ++i)
      mask_col.push_back(prep.masks.map_pool.val(i) > 0.0 ? 1.0 : 0.0);
    bundle.map_feats = interaction_.encode_map(
        tape, prep.map_tokens,
        tape.constant({cfg_.map_slots, 1}, std::move(mask_col)));
  }

  const FeatureBundle hat = interaction_.spatial_embed(tape, bundle,
                                                       prep.masks);
  const Tensor h_e = interaction_.cross_modal_attention(tape, hat, prep.masks);
  const Tensor f_c = interaction_.regression_head(tape, h_e);
  return interaction_.spatio_temporal_encode(tape, f_v, f_c, prep.masks);
}

TotalLoss DemoModel::forward_train(Tape& tape, const Scene& scene,
                                   Rng& noise) const {
  const ScenePrep prep = prepare(tape, scene, true);
  StepSpec spec{scene.dt_s};

  const DynStageOutput rollout = dyn_.iterative_generate(
      tape, prep.hist_flat, prep.last_state, scene.attrs, spec,
      GenerationMode::Prior, {}, &noise);
  const DynStageOutput guided = dyn_.iterative_generate(
      tape, prep.hist_flat, prep.last_state, scene.attrs, spec,
      GenerationMode::Posterior, prep.teacher_future, &noise);

  const Tensor kl =
      kl_loss(tape, guided.posteriors, guided.priors, prep.dyn_mask);
  std::vector<Tensor> teacher_states;
  teacher_states.push_back(prep.last_state);
  teacher_states.insert(teacher_states.end(), prep.teacher_future.begin(),
                        prep.teacher_future.end());
  const Tensor di =
      dynamics_informed_loss(tape, teacher_states, guided.controls,
                             scene.attrs, spec, cfg_.v_min_floor,
                             prep.dyn_mask);

  const Tensor f_i = interaction_forward(tape, prep, rollout);
  const DecodeTensors decoded =
      decoder_.decode(tape, slice_rows(f_i, 0, 1),
                      slice_rows(rollout.dyn_features, 0, 1));
  return total_loss(tape, decoded, kl, di, prep.gt_future, prep.gt_maneuver,
                    cfg_.weights, cfg_.mode);
}

PredictionSet DemoModel::predict(const Scene& scene) const {
  Tape tape;
  const ScenePrep prep = prepare(tape, scene, false);
  StepSpec spec{scene.dt_s};
  const DynStageOutput rollout = dyn_.iterative_generate(
      tape, prep.hist_flat, prep.last_state, scene.attrs, spec,
      GenerationMode::Prior, {}, nullptr);
  const Tensor f_i = interaction_forward(tape, prep, rollout);
  const DecodeTensors decoded =
      decoder_.decode(tape, slice_rows(f_i, 0, 1),
                      slice_rows(rollout.dyn_features, 0, 1));
  return to_prediction_set(decoded, prep.anchor_x, prep.anchor_y);
}

std::vector<double> DemoModel::interaction_features(const Scene& scene) const {
  Tape tape;
  const ScenePrep prep = prepare(tape, scene, false);
  StepSpec spec{scene.dt_s};
  const DynStageOutput rollout = dyn_.iterative_generate(
      tape, prep.hist_flat, prep.last_state, scene.attrs, spec,
      GenerationMode::Prior, {}, nullptr);
  const Tensor f_i = interaction_forward(tape, prep, rollout);
  return std::vector<double>(f_i.values().begin(), f_i.values().end());
}

EpochStats DemoModel::train_epoch(std::vector<Scene>& scenes, AdamW& opt,
                                  CosineSchedule& schedule, Rng& rng,
                                  int batch_size) {
  if (scenes.empty()) throw EmptySequence();
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }

  EpochStats stats;
  int in_batch = 0;
  for (std::size_t idx = 0; idx < order.size(); ++idx) {
    Rng noise = rng.fork(order[idx]);
    Tape tape;
    const TotalLoss losses =
        forward_train(tape, scenes[order[idx]], noise);
    tape.backward(losses.total);
    stats.total += losses.total.scalar();
    stats.kl += losses.kl.scalar();
    stats.di += losses.di.scalar();
    stats.ce += losses.ce.scalar();
    stats.ac += losses.ac.scalar();
    ++in_batch;
    if (in_batch == batch_size || idx + 1 == order.size()) {
      // A parameter untouched by this batch (e.g. the trajectory head of a
      // maneuver no scene carried) simply has a zero gradient.
      for (auto& p : store_) {
        if (p->grad.empty()) {
          p->grad.assign(p->value.size(), 0.0);
          continue;
        }
        const double inv = 1.0 / static_cast<double>(in_batch);
        for (double& g : p->grad) g *= inv;
      }
      stats.lr = schedule.advance();
      opt.step(store_, stats.lr);
      in_batch = 0;
    }
  }
  const double inv = 1.0 / static_cast<double>(scenes.size());
  stats.total *= inv;
  stats.kl *= inv;
  stats.di *= inv;
  stats.ce *= inv;
  stats.ac *= inv;
  return stats;
}

}  // namespace demo
