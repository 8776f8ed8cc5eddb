#pragma once

#include <array>
#include <string>
#include <vector>

#include "demo/config.hpp"
#include "demo/dynamics.hpp"
#include "demo/layers.hpp"
#include "demo/rng.hpp"
#include "demo/tensor.hpp"

namespace demo {

enum class LateralManeuver { Keep = 0, LeftChange = 1, RightChange = 2 };
enum class LongitudinalManeuver { Normal = 0, Braking = 1 };

struct Maneuver {
  LateralManeuver lateral = LateralManeuver::Keep;
  LongitudinalManeuver longitudinal = LongitudinalManeuver::Normal;
};

constexpr int kManeuverCount = 6;

inline int maneuver_index(Maneuver m) {
  return static_cast<int>(m.lateral) * 2 + static_cast<int>(m.longitudinal);
}
Maneuver maneuver_from_index(int idx);
std::string maneuver_name(Maneuver m);

/// K candidate futures (absolute positions) with their probabilities.
struct PredictionSet {
  std::vector<std::vector<std::array<double, 2>>> trajectories;  // K x t_f x 2
  std::vector<double> maneuver_probs;                            // K, sums to 1
};

enum class DatasetMode { Highway, Nuscenes };
DatasetMode parse_dataset_mode(const std::string& s);

struct LossWeights {
  double w_kl = 0.5;
  double w_di = 1.0;
  double w_ce = 1.0;
  double w_ac = 1.0;
  // Components of the nuscenes-mode accuracy term.
  double w_min_ade = 1.0;
  double w_min_fde = 1.0;

  static LossWeights from_config(const Config& cfg);
  void validate() const;
};

struct DecoderConfig {
  int d_model = 64;
  int t_f_steps = 25;
  double sigma_floor = 1e-3;
  double rho_scale = 0.99;
};

/// Tape-side decode results. Candidate positions are relative to the scene
/// anchor (the target's last observed position); per-step displacement
/// heads are cumulatively summed into positions.
struct DecodeTensors {
  std::vector<Tensor> positions;  // K tensors [t_f, 2]
  std::vector<Tensor> sigmas;     // K tensors [t_f, 2], softplus + floor
  std::vector<Tensor> rhos;       // K tensors [t_f, 1], tanh * rho_scale
  Tensor probs;                   // [1, K]
};

class MultiModalDecoder {
 public:
  MultiModalDecoder() = default;
  MultiModalDecoder(ParamStore& store, const DecoderConfig& cfg, Rng& rng);

  /// f_i_target / f_d_target: [1, d_model] target rows of the interaction
  /// and dynamic features.
  DecodeTensors decode(Tape& tape, const Tensor& f_i_target,
                       const Tensor& f_d_target) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  Mlp token_interaction;  // d -> d
  Mlp token_dynamic;      // d -> d
  GluLayer token_glu;     // 2d -> 2d
  Linear prob_head;       // 2d -> K
  std::vector<Mlp> trajectory_heads;  // K heads: 2d -> d -> t_f*5
};

/// Export a DecodeTensors into plain values, adding the anchor back.
PredictionSet to_prediction_set(const DecodeTensors& d, double anchor_x,
                                double anchor_y);

struct TotalLoss {
  Tensor total;
  Tensor kl;
  Tensor di;
  Tensor ce;
  Tensor ac;
};

/// w_kl*L_KL + w_di*L_DI + w_ce*L_CE + w_ac*L_AC. The ground-truth future is
/// anchor-relative [t_f, 2]. Highway mode scores the ground-truth-maneuver
/// candidate with MSE plus bivariate-Gaussian negative log-likelihood;
/// nuscenes mode uses the weighted minADE/minFDE over all candidates.
TotalLoss total_loss(Tape& tape, const DecodeTensors& decoded,
                     const Tensor& kl, const Tensor& di,
                     const Tensor& gt_future, Maneuver gt_maneuver,
                     const LossWeights& weights, DatasetMode mode);

/// Maneuver labeling rule: lateral from the net lateral displacement over
/// the future window against the half-lane threshold (strict inequality,
/// +y is left); braking when the mean future acceleration drops below
/// -0.5 m/s^2.
struct ManeuverLabelOptions {
  double lane_threshold_m = 1.75;
  double braking_threshold_mps2 = -0.5;
};

Maneuver label_maneuver(const KinematicState& last_history,
                        std::span<const KinematicState> future, double dt_s,
                        const ManeuverLabelOptions& opts = {});

}  // namespace demo
