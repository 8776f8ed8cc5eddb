#pragma once

#include <string>
#include <vector>

#include "demo/data_io.hpp"
#include "demo/decoder.hpp"
#include "demo/dyn_stage.hpp"
#include "demo/interaction_stage.hpp"
#include "demo/metrics.hpp"
#include "demo/optim.hpp"

namespace demo {

struct ModelConfig {
  DatasetMode mode = DatasetMode::Highway;
  HorizonSpec horizon;
  int d_model = 64;
  int z_dim = 16;
  int fusion_blocks = 2;
  int fusion_heads = 1;
  int ffn_hidden = 128;
  int n_max = 8;
  int map_slots = 4;
  int map_points = 10;
  double steer_limit = 0.6;
  double accel_limit = 8.0;
  double v_min_floor = 0.5;
  double graph_radius_m = 50.0;
  LossWeights weights;

  int vehicle_slots() const { return n_max + 1; }
  bool use_map() const { return mode == DatasetMode::Nuscenes; }

  static ModelConfig from_config(const Config& cfg, const std::string& mode);
};

struct EpochStats {
  double total = 0.0;
  double kl = 0.0;
  double di = 0.0;
  double ce = 0.0;
  double ac = 0.0;
  double lr = 0.0;
};

/// The two-stage predictor: dynamics stage, interaction stage and the
/// multi-modal decoder over one shared parameter store. Construction order
/// of the parameters is fixed, so identical seeds give identical models.
class DemoModel {
 public:
  DemoModel(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Training forward pass; losses stay on the caller's tape.
  TotalLoss forward_train(Tape& tape, const Scene& scene, Rng& noise) const;

  /// Deterministic evaluation (latent at the prior mean).
  PredictionSet predict(const Scene& scene) const;

  /// Interaction features F_i [V, d] flattened row-major (for tests).
  std::vector<double> interaction_features(const Scene& scene) const;

  /// One pass over the scenes in a seeded shuffle order, accumulating
  /// gradients over `batch_size` scenes per optimizer step.
  EpochStats train_epoch(std::vector<Scene>& scenes, AdamW& opt,
                         CosineSchedule& schedule, Rng& rng, int batch_size);

  void save_checkpoint(const std::string& path) const { store_.save(path); }
  void load_checkpoint(const std::string& path) { store_.load(path); }

 private:
  struct ScenePrep;
  ScenePrep prepare(Tape& tape, const Scene& scene, bool need_future) const;
  Tensor interaction_forward(Tape& tape, const ScenePrep& prep,
                             const DynStageOutput& rollout) const;

  ModelConfig cfg_;
  ParamStore store_;
  DynStage dyn_;
  InteractionStage interaction_;
  MultiModalDecoder decoder_;
};

}  // namespace demo
