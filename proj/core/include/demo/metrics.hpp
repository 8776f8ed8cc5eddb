#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "demo/data_io.hpp"
#include "demo/decoder.hpp"

namespace demo {

struct MetricReport {
  std::map<int, double> rmse_per_second;  // 1..floor(t_f_s)
  std::map<int, double> min_ade_k;
  std::map<int, double> min_fde_k;
  int count = 0;

  std::string to_json() const;
  /// Aligned plain-text table (one metric row per line).
  std::string to_table() const;
};

using Trajectory = std::vector<std::array<double, 2>>;

/// sqrt(mean over scenes of the squared displacement at the step that ends
/// the given whole second), scored on each scene's highest-probability
/// candidate. `preds` are those most-probable trajectories.
double rmse_at(std::span<const Trajectory> preds,
               std::span<const Trajectory> gts, int second, double dt_s);

/// Minimum over the top-K-probability candidates of the mean per-step
/// displacement. Ties in probability break toward the lower index.
double min_ade(const PredictionSet& pred, const Trajectory& gt, int k);

/// As min_ade, final step only.
double min_fde(const PredictionSet& pred, const Trajectory& gt, int k);

/// Extrapolate the last observed displacement (velocity and heading held
/// constant) for t_f_steps.
Trajectory const_velocity_baseline(const Scene& scene);

Trajectory future_positions(const Scene& scene);

/// Index of the highest-probability candidate (ties toward lower index).
std::size_t most_probable_index(const PredictionSet& pred);

/// Full report over aligned scene/prediction pairs.
MetricReport evaluate_predictions(
    const std::vector<std::string>& scene_ids,
    const std::vector<PredictionSet>& preds,
    const std::vector<Scene>& ground_truth, double dt_s,
    const std::vector<int>& ks = {1, 2, 3, 6});

}  // namespace demo
