#include "demo/optim.hpp"

#include <cmath>

namespace demo {

double CosineSchedule::current() const {
  if (step >= t_max) return lr_min;
  const double cosv =
      std::cos(M_PI * static_cast<double>(step) / static_cast<double>(t_max));
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + cosv);
}

void AdamW::step(ParamStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : store) {
    if (p->grad.empty()) throw MissingGradient(p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->moment1[i] = beta1_ * p->moment1[i] + (1.0 - beta1_) * g;
      p->moment2[i] = beta2_ * p->moment2[i] + (1.0 - beta2_) * g * g;
      const double m_hat = p->moment1[i] / bc1;
      const double v_hat = p->moment2[i] / bc2;
      p->value[i] -= lr * weight_decay_ * p->value[i];
      p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
  store.zero_grads();
}

}  // namespace demo
