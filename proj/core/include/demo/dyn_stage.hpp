#pragma once

#include <optional>
#include <span>
#include <vector>

#include "demo/dynamics.hpp"
#include "demo/dynamics_diff.hpp"
#include "demo/layers.hpp"
#include "demo/rng.hpp"
#include "demo/tensor.hpp"

namespace demo {

struct DynStageConfig {
  int t_p_steps = 15;
  int t_s_steps = 10;
  int d_model = 64;
  int z_dim = 16;
  double steer_limit = 0.6;
  double accel_limit = 8.0;
  double logvar_min = -8.0;
  double logvar_max = 4.0;
  double v_min_floor = 0.5;
};

/// Diagonal Gaussian over the latent control code.
struct GaussianLatent {
  Tensor mean;     // [V, z_dim]
  Tensor log_var;  // [V, z_dim], clamped to [logvar_min, logvar_max]
};

/// Reparameterized draw mean + exp(0.5 log_var) . eps.
Tensor sample_latent(const GaussianLatent& g, const Tensor& eps);

enum class GenerationMode { Prior, Posterior };

/// Rows are vehicles throughout.
struct DynStageOutput {
  std::vector<Tensor> short_traj;          // t_s states [V, 4]
  std::vector<Tensor> controls;            // t_s controls [V, 4]
  Tensor dyn_features;                     // [V, d_model]
  std::vector<GaussianLatent> priors;      // one per generated step
  std::vector<GaussianLatent> posteriors;  // posterior mode only
};

/// Generation is prior-driven in both modes; the posterior network only
/// produces the Gaussians that the divergence loss aligns with the priors.
/// Posterior mode teacher-forces the state path with the supplied future,
/// so its one-step reconstructions feed the dynamics-informed loss.
class DynStage {
 public:
  DynStage() = default;
  DynStage(ParamStore& store, const DynStageConfig& cfg, Rng& rng);

  /// history_flat: [V, t_p_steps*4] (states concatenated along time).
  Tensor embed_history(Tape& tape, const Tensor& history_flat) const;
  /// Per-step state encoder used to re-condition after each generated step.
  Tensor encode_state(Tape& tape, const Tensor& state) const;

  GaussianLatent prior(Tape& tape, const Tensor& context) const;
  GaussianLatent posterior(Tape& tape, const Tensor& context_t,
                           const Tensor& context_t1) const;

  /// Decode (yaw, yaw_rate, steer, accel); steer squashed through
  /// steer_limit*tanh, accel clamped to +-accel_limit.
  Tensor generate_control(Tape& tape, const Tensor& state_enc,
                          const Tensor& z) const;

  /// The iterative loop. `last_state` is the state at the current moment.
  /// In posterior mode `teacher_future` must hold t_s_steps true states.
  /// `noise` draws the latent; pass nullptr to use the prior mean
  /// (deterministic evaluation).
  DynStageOutput iterative_generate(Tape& tape, const Tensor& history_flat,
                                    const Tensor& last_state,
                                    const VehicleAttributes& attrs,
                                    StepSpec spec, GenerationMode mode,
                                    std::span<const Tensor> teacher_future,
                                    Rng* noise) const;

  const DynStageConfig& config() const { return cfg_; }

 private:
  DynStageConfig cfg_;
  Mlp hist_embed;          // t_p*4 -> d -> d
  Mlp step_enc;            // 4 -> d -> d
  Linear prior_mean, prior_logvar;
  Mlp post_hidden;         // 2d -> d
  Linear post_mean, post_logvar;
  Mlp gen_net;             // d + z -> d -> 4
  Mlp dyn_feat_net;        // t_s*8 -> d -> d
};

/// (1/t_s) sum of closed-form diagonal-Gaussian KL(q || p). `mask`, when
/// defined ([V,1]), restricts the per-vehicle mean to present rows.
Tensor kl_loss(Tape& tape, std::span<const GaussianLatent> posteriors,
               std::span<const GaussianLatent> priors,
               const Tensor& mask = {});

/// Mean over the window of the squared residual between true states and the
/// one-step reconstructions pushed through the discrete dynamics:
/// mean_t |X^t - Y(X^{t-1}, C^{t-1})|^2. true_states needs exactly one more
/// entry than controls.
Tensor dynamics_informed_loss(Tape& tape, std::span<const Tensor> true_states,
                              std::span<const Tensor> controls,
                              const VehicleAttributes& attrs, StepSpec spec,
                              double v_min_floor = 0.5,
                              const Tensor& mask = {});

}  // namespace demo
