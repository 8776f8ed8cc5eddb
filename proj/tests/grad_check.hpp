#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "demo/params.hpp"
#include "demo/tensor.hpp"

namespace demo::testing {

/// Max relative error between the analytic gradient of a scalar-valued
/// tensor function and central finite differences at eps=1e-6.
inline double input_grad_max_rel_error(
    const std::function<Tensor(Tape&, const Tensor&)>& f, Shape shape,
    std::vector<double> x0, double eps = 1e-6) {
  Tape tape;
  const Tensor x = tape.tensor(shape, x0, true);
  const Tensor y = f(tape, x);
  tape.backward(y);
  std::vector<double> analytic(x0.size(), 0.0);
  for (std::size_t i = 0; i < x0.size(); ++i) analytic[i] = x.grad_at(i);

  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto xp = x0, xm = x0;
    xp[i] += eps;
    xm[i] -= eps;
    Tape tp, tm;
    const double fp = f(tp, tp.tensor(shape, xp, false)).scalar();
    const double fm = f(tm, tm.tensor(shape, xm, false)).scalar();
    const double fd = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-4});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

/// Same check for every parameter scalar reachable from `eval`, which must
/// construct a fresh tape, run the model piece and return the scalar loss
/// (running backward() when asked). Parameter values are perturbed in place.
inline double param_grad_max_rel_error(
    ParamStore& store, const std::function<double(bool run_backward)>& eval,
    double eps = 1e-6) {
  store.zero_grads();
  (void)eval(true);
  std::vector<std::vector<double>> analytic;
  for (auto& p : store)
    analytic.push_back(p->grad.empty()
                           ? std::vector<double>(p->size(), 0.0)
                           : p->grad);
  store.zero_grads();

  double worst = 0.0;
  std::size_t pi = 0;
  for (auto& p : store) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double fp = eval(false);
      p->value[i] = saved - eps;
      const double fm = eval(false);
      p->value[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
    ++pi;
  }
  return worst;
}

}  // namespace demo::testing
