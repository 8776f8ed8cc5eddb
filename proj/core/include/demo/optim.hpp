#pragma once

#include "demo/config.hpp"
#include "demo/params.hpp"

namespace demo {

/// Cosine-annealed learning rate from lr_init down to lr_min over t_max
/// optimizer steps (held at lr_min afterwards).
struct CosineSchedule {
  double lr_init = 0.001;
  double lr_min = 1e-5;
  long t_max = 1000;
  long step = 0;

  double current() const;
  double advance() {
    const double lr = current();
    ++step;
    return lr;
  }
};

/// Adam with decoupled weight decay: the decay term scales the parameter
/// directly and never enters the moment estimates.
class AdamW {
 public:
  AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over every parameter in the store at the given rate.
  /// Throws MissingGradient when a parameter has no accumulated gradient.
  /// Gradients are cleared afterwards.
  void step(ParamStore& store, double lr);

  long steps_taken() const { return t_; }

 private:
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

}  // namespace demo
