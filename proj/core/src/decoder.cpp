#include "demo/decoder.hpp"

#include <cmath>

namespace demo {

Maneuver maneuver_from_index(int idx) {
  if (idx < 0 || idx >= kManeuverCount)
    throw UsageError("maneuver index " + std::to_string(idx));
  Maneuver m;
  m.lateral = static_cast<LateralManeuver>(idx / 2);
  m.longitudinal = static_cast<LongitudinalManeuver>(idx % 2);
  return m;
}

std::string maneuver_name(Maneuver m) {
  static const char* lat[] = {"keep", "left_change", "right_change"};
  static const char* lon[] = {"normal", "braking"};
  return std::string(lat[static_cast<int>(m.lateral)]) + "/" +
         lon[static_cast<int>(m.longitudinal)];
}

DatasetMode parse_dataset_mode(const std::string& s) {
  if (s == "highway") return DatasetMode::Highway;
  if (s == "nuscenes") return DatasetMode::Nuscenes;
  throw ModeUnknown(s);
}

LossWeights LossWeights::from_config(const Config& cfg) {
  LossWeights w;
  w.w_kl = cfg.get_double("loss.w_kl", w.w_kl);
  w.w_di = cfg.get_double("loss.w_di", w.w_di);
  w.w_ce = cfg.get_double("loss.w_ce", w.w_ce);
  w.w_ac = cfg.get_double("loss.w_ac", w.w_ac);
  w.w_min_ade = cfg.get_double("loss.w_min_ade", w.w_min_ade);
  w.w_min_fde = cfg.get_double("loss.w_min_fde", w.w_min_fde);
  w.validate();
  return w;
}

void LossWeights::validate() const {
  for (double w : {w_kl, w_di, w_ce, w_ac})
    if (w < 0.0) throw UsageError("loss weights must be nonnegative");
  if (w_kl == 0.0 && w_di == 0.0 && w_ce == 0.0 && w_ac == 0.0)
    throw UsageError("at least one loss weight must be positive");
}

MultiModalDecoder::MultiModalDecoder(ParamStore& store,
                                     const DecoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      token_interaction(store, "dec.ti", {cfg.d_model, cfg.d_model}, rng,
                        Activation::Gelu, Activation::Gelu),
      token_dynamic(store, "dec.td", {cfg.d_model, cfg.d_model}, rng,
                    Activation::Gelu, Activation::Gelu),
      token_glu(store, "dec.glu", 2 * cfg.d_model, 2 * cfg.d_model, rng),
      prob_head(store, "dec.prob", 2 * cfg.d_model, kManeuverCount, rng) {
  for (int k = 0; k < kManeuverCount; ++k)
    trajectory_heads.emplace_back(
        store, "dec.traj" + std::to_string(k),
        std::vector<int>{2 * cfg.d_model, cfg.d_model, cfg.t_f_steps * 5}, rng,
        Activation::Relu, Activation::None);
}

DecodeTensors MultiModalDecoder::decode(Tape& tape, const Tensor& f_i_target,
                                        const Tensor& f_d_target) const {
  const std::array<Tensor, 2> parts = {
      token_interaction.forward(tape, f_i_target),
      token_dynamic.forward(tape, f_d_target)};
  const Tensor token = token_glu.forward(tape, concat_cols(parts));

  DecodeTensors out;
  out.probs = softmax(prob_head.forward(tape, token));
  for (const Mlp& head : trajectory_heads) {
    const Tensor params =
        reshape(head.forward(tape, token), {cfg_.t_f_steps, 5});
    const Tensor deltas = slice_cols(params, 0, 2);
    // Per-step displacements accumulate into anchor-relative positions.
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(cfg_.t_f_steps));
    Tensor running = slice_rows(deltas, 0, 1);
    rows.push_back(running);
    for (int t = 1; t < cfg_.t_f_steps; ++t) {
      running = add(running, slice_rows(deltas, t, 1));
      rows.push_back(running);
    }
    out.positions.push_back(concat_rows(rows));
    out.sigmas.push_back(
        add_scalar(softplus(slice_cols(params, 2, 2)), cfg_.sigma_floor));
    out.rhos.push_back(scale(tanh_t(slice_cols(params, 4, 1)),
                             cfg_.rho_scale));
  }
  return out;
}

PredictionSet to_prediction_set(const DecodeTensors& d, double anchor_x,
                                double anchor_y) {
  PredictionSet set;
  set.maneuver_probs.assign(d.probs.values().begin(), d.probs.values().end());
  for (const Tensor& pos : d.positions) {
    std::vector<std::array<double, 2>> traj;
    traj.reserve(static_cast<std::size_t>(pos.rows()));
    for (int t = 0; t < pos.rows(); ++t)
      traj.push_back({pos.val(t, 0) + anchor_x, pos.val(t, 1) + anchor_y});
    set.trajectories.push_back(std::move(traj));
  }
  return set;
}

namespace {

/// Mean over steps of the squared Euclidean displacement.
Tensor mse_loss(const Tensor& pos, const Tensor& gt) {
  return reduce_mean(sum_cols(square(sub(pos, gt))));
}

/// Per-step displacement norms [t_f, 1].
Tensor step_distances(Tape& tape, const Tensor& pos, const Tensor& gt) {
  (void)tape;
  return sqrt_t(add_scalar(sum_cols(square(sub(pos, gt))), 1e-12));
}

/// Bivariate Gaussian negative log-likelihood, averaged over steps.
Tensor gaussian_nll(Tape& tape, const Tensor& pos, const Tensor& sigma,
                    const Tensor& rho, const Tensor& gt) {
  const Tensor dx = sub(slice_cols(pos, 0, 1), slice_cols(gt, 0, 1));
  const Tensor dy = sub(slice_cols(pos, 1, 1), slice_cols(gt, 1, 1));
  const Tensor sx = slice_cols(sigma, 0, 1);
  const Tensor sy = slice_cols(sigma, 1, 1);
  const Tensor one_minus_r2 =
      add_scalar(neg(square(rho)), 1.0);  // >= 1 - rho_scale^2 > 0
  const Tensor zx = div(dx, sx);
  const Tensor zy = div(dy, sy);
  const Tensor quad =
      sub(add(square(zx), square(zy)), scale(mul(rho, mul(zx, zy)), 2.0));
  const Tensor log_norm =
      add(add(log_t(sx), log_t(sy)),
          add_scalar(scale(log_t(one_minus_r2), 0.5),
                     std::log(2.0 * M_PI)));
  const Tensor nll =
      add(log_norm, div(quad, scale(one_minus_r2, 2.0)));
  (void)tape;
  return reduce_mean(nll);
}

}  // namespace

TotalLoss total_loss(Tape& tape, const DecodeTensors& decoded,
                     const Tensor& kl, const Tensor& di,
                     const Tensor& gt_future, Maneuver gt_maneuver,
                     const LossWeights& weights, DatasetMode mode) {
  weights.validate();
  if (gt_future.rows() != decoded.positions.at(0).rows())
    throw LengthMismatch("ground-truth future has " +
                         std::to_string(gt_future.rows()) + " steps");

  TotalLoss out;
  out.kl = kl;
  out.di = di;

  const int gt_idx = maneuver_index(gt_maneuver);
  out.ce = neg(log_t(slice_cols(decoded.probs, gt_idx, 1)));

  if (mode == DatasetMode::Highway) {
    const Tensor& pos = decoded.positions[static_cast<std::size_t>(gt_idx)];
    const Tensor mse = mse_loss(pos, gt_future);
    const Tensor nll =
        gaussian_nll(tape, pos, decoded.sigmas[static_cast<std::size_t>(gt_idx)],
                     decoded.rhos[static_cast<std::size_t>(gt_idx)], gt_future);
    out.ac = add(mse, nll);
  } else {
    // Winner-takes-all: gradient flows into the currently best candidate.
    std::size_t best_ade = 0, best_fde = 0;
    double best_ade_v = 0.0, best_fde_v = 0.0;
    std::vector<Tensor> ades, fdes;
    for (std::size_t k = 0; k < decoded.positions.size(); ++k) {
      const Tensor dists =
          step_distances(tape, decoded.positions[k], gt_future);
      ades.push_back(reduce_mean(dists));
      fdes.push_back(slice_rows(dists, dists.rows() - 1, 1));
      if (k == 0 || ades.back().scalar() < best_ade_v) {
        best_ade_v = ades.back().scalar();
        best_ade = k;
      }
      if (k == 0 || fdes.back().scalar() < best_fde_v) {
        best_fde_v = fdes.back().scalar();
        best_fde = k;
      }
    }
    out.ac = add(scale(ades[best_ade], weights.w_min_ade),
                 scale(reshape(fdes[best_fde], {1, 1}), weights.w_min_fde));
  }

  out.total = add(add(scale(out.kl, weights.w_kl), scale(out.di, weights.w_di)),
                  add(scale(out.ce, weights.w_ce), scale(out.ac, weights.w_ac)));
  return out;
}

Maneuver label_maneuver(const KinematicState& last_history,
                        std::span<const KinematicState> future, double dt_s,
                        const ManeuverLabelOptions& opts) {
  if (future.empty()) throw EmptySequence();
  Maneuver m;
  const double lateral_shift = future.back().y_m - last_history.y_m;
  if (lateral_shift > opts.lane_threshold_m)
    m.lateral = LateralManeuver::LeftChange;
  else if (lateral_shift < -opts.lane_threshold_m)
    m.lateral = LateralManeuver::RightChange;

  const double speed_now =
      std::hypot(last_history.vx_mps, last_history.vy_mps);
  const double speed_end =
      std::hypot(future.back().vx_mps, future.back().vy_mps);
  const double horizon = static_cast<double>(future.size()) * dt_s;
  if ((speed_end - speed_now) / horizon < opts.braking_threshold_mps2)
    m.longitudinal = LongitudinalManeuver::Braking;
  return m;
}

}  // namespace demo
