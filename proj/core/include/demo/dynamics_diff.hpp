#pragma once

#include "demo/dynamics.hpp"
#include "demo/tensor.hpp"

namespace demo {

/// Discrete dynamics step over a batch of vehicles, recorded on the tape so
/// gradients flow into both states and controls. Rows are vehicles; columns
/// are [x, y, vx, vy] for states and [yaw, yaw_rate, steer, accel] for
/// controls. The longitudinal speed is sign-preservingly floored at
/// v_min_floor before every use, which is the differentiable counterpart of
/// the scalar API's NearZeroLongitudinalSpeed guard.
Tensor discrete_step_tensor(Tape& tape, const Tensor& state,
                            const Tensor& ctrl, const VehicleAttributes& attrs,
                            StepSpec spec, double v_min_floor = 0.5);

}  // namespace demo
