#include "demo/dynamics_diff.hpp"

#include <array>

namespace demo {

Tensor discrete_step_tensor(Tape&, const Tensor& state,
                            const Tensor& ctrl, const VehicleAttributes& attrs,
                            StepSpec spec, double v_min_floor) {
  if (state.cols() != 4 || ctrl.cols() != 4 || state.rows() != ctrl.rows())
    throw ShapeMismatch("discrete_step_tensor: state " +
                        shape_str(state.shape()) + ", ctrl " +
                        shape_str(ctrl.shape()));
  const double dt = spec.dt_s;
  const double m = attrs.mass_kg;
  const double lf = attrs.dist_cg_front_m;
  const double lr = attrs.dist_cg_rear_m;
  const double kf = attrs.cornering_stiffness_front_N_per_rad;
  const double kr = attrs.cornering_stiffness_rear_N_per_rad;

  const Tensor x = slice_cols(state, 0, 1);
  const Tensor y = slice_cols(state, 1, 1);
  const Tensor vx = clamp_min_abs(slice_cols(state, 2, 1), v_min_floor);
  const Tensor vy = slice_cols(state, 3, 1);
  const Tensor yaw = slice_cols(ctrl, 0, 1);
  const Tensor yaw_rate = slice_cols(ctrl, 1, 1);
  const Tensor steer = slice_cols(ctrl, 2, 1);
  const Tensor accel = slice_cols(ctrl, 3, 1);

  const Tensor cos_yaw = cos_t(yaw);
  const Tensor sin_yaw = sin_t(yaw);

  const Tensor x_next =
      add(x, scale(sub(mul(vx, cos_yaw), mul(vy, sin_yaw)), dt));
  const Tensor y_next =
      add(y, scale(add(mul(vy, cos_yaw), mul(vx, sin_yaw)), dt));
  const Tensor vx_next = add(vx, scale(accel, dt));

  const Tensor numerator =
      add(add(scale(mul(vx, vy), m), scale(yaw_rate, dt * (lf * kf - lr * kr))),
          add(scale(mul(steer, vx), -dt * kf),
              scale(mul(square(vx), yaw_rate), -dt * m)));
  const Tensor denominator = add_scalar(scale(vx, m), -dt * (kf + kr));
  const Tensor vy_next = div(numerator, denominator);

  const std::array<Tensor, 4> cols = {x_next, y_next, vx_next, vy_next};
  return concat_cols(cols);
}

}  // namespace demo
