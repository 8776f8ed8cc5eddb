#include "demo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace demo {

namespace {

double displacement(const std::array<double, 2>& a,
                    const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

/// Candidate indices ordered by decreasing probability, stable in index.
std::vector<std::size_t> probability_order(const PredictionSet& pred) {
  std::vector<std::size_t> order(pred.maneuver_probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return pred.maneuver_probs[a] > pred.maneuver_probs[b];
                   });
  return order;
}

}  // namespace

std::size_t most_probable_index(const PredictionSet& pred) {
  if (pred.maneuver_probs.empty()) throw EmptySequence();
  return probability_order(pred).front();
}

double rmse_at(std::span<const Trajectory> preds,
               std::span<const Trajectory> gts, int second, double dt_s) {
  if (preds.size() != gts.size() || preds.empty())
    throw LengthMismatch("rmse_at needs matched, non-empty trajectory sets");
  const long idx = std::lround(second / dt_s) - 1;
  if (second < 1 || idx < 0 ||
      idx >= static_cast<long>(preds.front().size()))
    throw HorizonExceeded(second);
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != gts[i].size())
      throw LengthMismatch("prediction/ground-truth step counts");
    const double d = displacement(preds[i][static_cast<std::size_t>(idx)],
                                  gts[i][static_cast<std::size_t>(idx)]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

namespace {

double min_displacement_error(const PredictionSet& pred, const Trajectory& gt,
                              int k, bool final_only) {
  if (k < 1 || static_cast<std::size_t>(k) > pred.trajectories.size())
    throw KTooLarge(static_cast<std::size_t>(std::max(k, 0)),
                    pred.trajectories.size());
  const auto order = probability_order(pred);
  double best = 0.0;
  for (int rank = 0; rank < k; ++rank) {
    const Trajectory& traj = pred.trajectories[order[static_cast<std::size_t>(rank)]];
    if (traj.size() != gt.size())
      throw LengthMismatch("candidate/ground-truth step counts");
    double err;
    if (final_only) {
      err = displacement(traj.back(), gt.back());
    } else {
      err = 0.0;
      for (std::size_t t = 0; t < traj.size(); ++t)
        err += displacement(traj[t], gt[t]);
      err /= static_cast<double>(traj.size());
    }
    if (rank == 0 || err < best) best = err;
  }
  return best;
}

}  // namespace

double min_ade(const PredictionSet& pred, const Trajectory& gt, int k) {
  return min_displacement_error(pred, gt, k, false);
}

double min_fde(const PredictionSet& pred, const Trajectory& gt, int k) {
  return min_displacement_error(pred, gt, k, true);
}

Trajectory const_velocity_baseline(const Scene& scene) {
  const auto& hist = scene.target.history;
  if (hist.size() < 2)
    throw LengthMismatch("baseline needs at least two history samples");
  const double step_x = hist.back().x_m - hist[hist.size() - 2].x_m;
  const double step_y = hist.back().y_m - hist[hist.size() - 2].y_m;
  const std::size_t t_f = scene.target.future.size();
  Trajectory out;
  out.reserve(t_f);
  for (std::size_t k = 1; k <= t_f; ++k)
    out.push_back({hist.back().x_m + step_x * static_cast<double>(k),
                   hist.back().y_m + step_y * static_cast<double>(k)});
  return out;
}

Trajectory future_positions(const Scene& scene) {
  Trajectory out;
  out.reserve(scene.target.future.size());
  for (const KinematicState& s : scene.target.future)
    out.push_back({s.x_m, s.y_m});
  return out;
}

MetricReport evaluate_predictions(const std::vector<std::string>& scene_ids,
                                  const std::vector<PredictionSet>& preds,
                                  const std::vector<Scene>& ground_truth,
                                  double dt_s, const std::vector<int>& ks) {
  if (scene_ids.size() != preds.size())
    throw LengthMismatch("scene ids vs predictions");
  std::map<std::string, const Scene*> by_id;
  for (const Scene& s : ground_truth) by_id[s.scene_id] = &s;

  std::vector<Trajectory> best, gts;
  std::vector<const PredictionSet*> sets;
  std::vector<const Scene*> scenes;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto it = by_id.find(scene_ids[i]);
    if (it == by_id.end()) throw IdMismatch(scene_ids[i]);
    scenes.push_back(it->second);
    sets.push_back(&preds[i]);
    best.push_back(preds[i].trajectories.at(most_probable_index(preds[i])));
    gts.push_back(future_positions(*it->second));
  }
  if (scenes.empty()) throw EmptySequence();

  MetricReport report;
  report.count = static_cast<int>(scenes.size());
  const double t_f_s = dt_s * static_cast<double>(gts.front().size());
  for (int second = 1; second <= static_cast<int>(t_f_s + 1e-9); ++second)
    report.rmse_per_second[second] = rmse_at(best, gts, second, dt_s);

  for (int k : ks) {
    if (static_cast<std::size_t>(k) > sets.front()->trajectories.size())
      continue;
    double ade = 0.0, fde = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      ade += min_ade(*sets[i], gts[i], k);
      fde += min_fde(*sets[i], gts[i], k);
    }
    report.min_ade_k[k] = ade / static_cast<double>(sets.size());
    report.min_fde_k[k] = fde / static_cast<double>(sets.size());
  }
  return report;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["count"] = count;
  for (const auto& [second, value] : rmse_per_second)
    j["rmse_per_second"][std::to_string(second)] = value;
  for (const auto& [k, value] : min_ade_k)
    j["min_ade"][std::to_string(k)] = value;
  for (const auto& [k, value] : min_fde_k)
    j["min_fde"][std::to_string(k)] = value;
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  out << "metric        ";
  for (const auto& [second, value] : rmse_per_second) out << "      " << second
                                                          << "s";
  out << "\n";
  out << "RMSE (m)      ";
  char buf[32];
  for (const auto& [second, value] : rmse_per_second) {
    std::snprintf(buf, sizeof(buf), "%8.3f", value);
    out << buf;
  }
  out << "\n";
  if (!min_ade_k.empty()) {
    out << "metric        ";
    for (const auto& [k, value] : min_ade_k) out << "     K=" << k;
    out << "\nminADE (m)    ";
    for (const auto& [k, value] : min_ade_k) {
      std::snprintf(buf, sizeof(buf), "%8.3f", value);
      out << buf;
    }
    out << "\nminFDE (m)    ";
    for (const auto& [k, value] : min_fde_k) {
      std::snprintf(buf, sizeof(buf), "%8.3f", value);
      out << buf;
    }
    out << "\n";
  }
  out << "scenes: " << count << "\n";
  return out.str();
}

}  // namespace demo
