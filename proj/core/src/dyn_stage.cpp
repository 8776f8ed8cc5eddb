#include "demo/dyn_stage.hpp"

#include <array>

namespace demo {

Tensor sample_latent(const GaussianLatent& g, const Tensor& eps) {
  return add(g.mean, mul(exp_t(scale(g.log_var, 0.5)), eps));
}

DynStage::DynStage(ParamStore& store, const DynStageConfig& cfg, Rng& rng)
    : cfg_(cfg),
      hist_embed(store, "dyn.hist",
                 {cfg.t_p_steps * 4, cfg.d_model, cfg.d_model}, rng,
                 Activation::Gelu, Activation::None),
      step_enc(store, "dyn.step", {4, cfg.d_model, cfg.d_model}, rng,
               Activation::Gelu, Activation::None),
      prior_mean(store, "dyn.prior.mean", cfg.d_model, cfg.z_dim, rng),
      prior_logvar(store, "dyn.prior.logvar", cfg.d_model, cfg.z_dim, rng),
      post_hidden(store, "dyn.post.hidden", {2 * cfg.d_model, cfg.d_model},
                  rng, Activation::Gelu, Activation::Gelu),
      post_mean(store, "dyn.post.mean", cfg.d_model, cfg.z_dim, rng),
      post_logvar(store, "dyn.post.logvar", cfg.d_model, cfg.z_dim, rng),
      gen_net(store, "dyn.gen", {cfg.d_model + cfg.z_dim, cfg.d_model, 4}, rng,
              Activation::Gelu, Activation::None),
      dyn_feat_net(store, "dyn.feat",
                   {cfg.t_s_steps * 8, cfg.d_model, cfg.d_model}, rng,
                   Activation::Gelu, Activation::None) {}

Tensor DynStage::embed_history(Tape& tape, const Tensor& history_flat) const {
  if (history_flat.cols() != cfg_.t_p_steps * 4)
    throw WrongHistoryLength(
        static_cast<std::size_t>(history_flat.cols()) / 4,
        static_cast<std::size_t>(cfg_.t_p_steps));
  return hist_embed.forward(tape, history_flat);
}

Tensor DynStage::encode_state(Tape& tape, const Tensor& state) const {
  return step_enc.forward(tape, state);
}

GaussianLatent DynStage::prior(Tape& tape, const Tensor& context) const {
  GaussianLatent g;
  g.mean = prior_mean.forward(tape, context);
  g.log_var = clamp(prior_logvar.forward(tape, context), cfg_.logvar_min,
                    cfg_.logvar_max);
  return g;
}

GaussianLatent DynStage::posterior(Tape& tape, const Tensor& context_t,
                                   const Tensor& context_t1) const {
  const std::array<Tensor, 2> joined = {context_t, context_t1};
  const Tensor hidden = post_hidden.forward(tape, concat_cols(joined));
  GaussianLatent g;
  g.mean = post_mean.forward(tape, hidden);
  g.log_var = clamp(post_logvar.forward(tape, hidden), cfg_.logvar_min,
                    cfg_.logvar_max);
  return g;
}

Tensor DynStage::generate_control(Tape& tape, const Tensor& state_enc,
                                  const Tensor& z) const {
  if (z.cols() != cfg_.z_dim)
    throw ShapeMismatch("latent z has dim " + std::to_string(z.cols()) +
                        ", expected " + std::to_string(cfg_.z_dim));
  const std::array<Tensor, 2> joined = {state_enc, z};
  const Tensor raw = gen_net.forward(tape, concat_cols(joined));
  const Tensor yaw = slice_cols(raw, 0, 1);
  const Tensor yaw_rate = slice_cols(raw, 1, 1);
  const Tensor steer = scale(tanh_t(slice_cols(raw, 2, 1)), cfg_.steer_limit);
  const Tensor accel =
      clamp(slice_cols(raw, 3, 1), -cfg_.accel_limit, cfg_.accel_limit);
  const std::array<Tensor, 4> cols = {yaw, yaw_rate, steer, accel};
  return concat_cols(cols);
}

DynStageOutput DynStage::iterative_generate(
    Tape& tape, const Tensor& history_flat, const Tensor& last_state,
    const VehicleAttributes& attrs, StepSpec spec, GenerationMode mode,
    std::span<const Tensor> teacher_future, Rng* noise) const {
  const int v = history_flat.rows();
  if (mode == GenerationMode::Posterior &&
      static_cast<int>(teacher_future.size()) != cfg_.t_s_steps)
    throw LengthMismatch("posterior mode needs " +
                         std::to_string(cfg_.t_s_steps) + " teacher states");

  DynStageOutput out;
  const Tensor x_ring = embed_history(tape, history_flat);
  Tensor state = last_state;

  for (int t = 0; t < cfg_.t_s_steps; ++t) {
    const Tensor enc = (t == 0) ? x_ring : encode_state(tape, state);
    const GaussianLatent pr = prior(tape, enc);
    out.priors.push_back(pr);
    if (mode == GenerationMode::Posterior) {
      const Tensor enc_next = encode_state(tape, teacher_future[t]);
      out.posteriors.push_back(posterior(tape, enc, enc_next));
    }
    Tensor z;
    if (noise) {
      std::vector<double> eps(static_cast<std::size_t>(v) * cfg_.z_dim);
      for (double& e : eps) e = noise->normal();
      z = sample_latent(pr, tape.constant({v, cfg_.z_dim}, std::move(eps)));
    } else {
      z = pr.mean;
    }
    const Tensor ctrl = generate_control(tape, enc, z);
    const Tensor next =
        discrete_step_tensor(tape, state, ctrl, attrs, spec, cfg_.v_min_floor);
    out.controls.push_back(ctrl);
    out.short_traj.push_back(next);
    state = (mode == GenerationMode::Posterior) ? teacher_future[t] : next;
  }

  std::vector<Tensor> pieces;
  pieces.reserve(out.short_traj.size() + out.controls.size());
  for (const Tensor& s : out.short_traj) pieces.push_back(s);
  for (const Tensor& c : out.controls) pieces.push_back(c);
  out.dyn_features = dyn_feat_net.forward(tape, concat_cols(pieces));
  return out;
}

namespace {

Tensor masked_row_mean(Tape&, const Tensor& per_row, const Tensor& mask) {
  if (!mask.defined()) return reduce_mean(per_row);
  double present = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) present += mask.val(i);
  if (present <= 0.0) throw NumericError("mask selects no rows");
  return scale(reduce_sum(mul(per_row, mask)), 1.0 / present);
}

}  // namespace

Tensor kl_loss(Tape& tape, std::span<const GaussianLatent> posteriors,
               std::span<const GaussianLatent> priors, const Tensor& mask) {
  if (posteriors.size() != priors.size() || posteriors.empty())
    throw LengthMismatch("kl_loss needs equal, non-empty Gaussian sequences");
  Tensor total;
  for (std::size_t t = 0; t < posteriors.size(); ++t) {
    const GaussianLatent& q = posteriors[t];
    const GaussianLatent& p = priors[t];
    if (q.mean.shape() != p.mean.shape())
      throw ShapeMismatch("kl_loss Gaussian dims");
    // KL(q||p) per element:
    //   0.5 * (exp(lq - lp) + (mq - mp)^2 exp(-lp) - 1 + lp - lq)
    const Tensor diff = sub(q.mean, p.mean);
    const Tensor ratio = exp_t(sub(q.log_var, p.log_var));
    const Tensor maha = mul(square(diff), exp_t(neg(p.log_var)));
    const Tensor elem = scale(
        add(add(ratio, maha), add_scalar(sub(p.log_var, q.log_var), -1.0)),
        0.5);
    const Tensor per_vehicle = sum_cols(elem);  // [V, 1]
    const Tensor step_kl = masked_row_mean(tape, per_vehicle, mask);
    total = total.defined() ? add(total, step_kl) : step_kl;
  }
  return scale(total, 1.0 / static_cast<double>(posteriors.size()));
}

Tensor dynamics_informed_loss(Tape& tape, std::span<const Tensor> true_states,
                              std::span<const Tensor> controls,
                              const VehicleAttributes& attrs, StepSpec spec,
                              double v_min_floor, const Tensor& mask) {
  if (true_states.size() != controls.size() + 1 || controls.empty())
    throw LengthMismatch("dynamics_informed_loss needs one more state than "
                         "controls");
  Tensor total;
  for (std::size_t t = 0; t < controls.size(); ++t) {
    const Tensor reconstructed = discrete_step_tensor(
        tape, true_states[t], controls[t], attrs, spec, v_min_floor);
    const Tensor residual = sub(true_states[t + 1], reconstructed);
    const Tensor per_vehicle = sum_cols(square(residual));  // [V, 1]
    const Tensor step_loss = masked_row_mean(tape, per_vehicle, mask);
    total = total.defined() ? add(total, step_loss) : step_loss;
  }
  return scale(total, 1.0 / static_cast<double>(controls.size()));
}

}  // namespace demo
