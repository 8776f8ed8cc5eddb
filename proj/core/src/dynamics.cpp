#include "demo/dynamics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace demo {

VehicleAttributes VehicleAttributes::from_config(const Config& cfg) {
  VehicleAttributes a;
  a.mass_kg = cfg.get_double("dynamics.mass_kg", a.mass_kg);
  a.yaw_inertia_kg_m2 =
      cfg.get_double("dynamics.yaw_inertia_kg_m2", a.yaw_inertia_kg_m2);
  a.dist_cg_front_m =
      cfg.get_double("dynamics.dist_cg_front_m", a.dist_cg_front_m);
  a.dist_cg_rear_m =
      cfg.get_double("dynamics.dist_cg_rear_m", a.dist_cg_rear_m);
  a.cornering_stiffness_front_N_per_rad =
      cfg.get_double("dynamics.cornering_stiffness_front_N_per_rad",
                     a.cornering_stiffness_front_N_per_rad);
  a.cornering_stiffness_rear_N_per_rad =
      cfg.get_double("dynamics.cornering_stiffness_rear_N_per_rad",
                     a.cornering_stiffness_rear_N_per_rad);
  a.validate();
  return a;
}

void VehicleAttributes::validate() const {
  if (!(mass_kg > 0.0)) throw UsageError("mass_kg must be positive");
  if (!(yaw_inertia_kg_m2 > 0.0))
    throw UsageError("yaw_inertia_kg_m2 must be positive");
  if (!(dist_cg_front_m > 0.0))
    throw UsageError("dist_cg_front_m must be positive");
  if (!(dist_cg_rear_m > 0.0))
    throw UsageError("dist_cg_rear_m must be positive");
  const double kf = cornering_stiffness_front_N_per_rad;
  const double kr = cornering_stiffness_rear_N_per_rad;
  if (kf == 0.0 || kr == 0.0)
    throw UsageError("cornering stiffnesses must be nonzero");
  if ((kf > 0.0) != (kr > 0.0))
    throw UsageError("front and rear cornering stiffness must share a sign");
}

StepSpec StepSpec::from_config(const Config& cfg) {
  StepSpec s;
  s.dt_s = cfg.get_double("horizon.dt_s", s.dt_s);
  s.validate();
  return s;
}

void StepSpec::validate() const {
  if (!(dt_s > 0.0) || dt_s > 1.0)
    throw UsageError("dt_s must lie in (0, 1] seconds");
}

DynamicsOptions DynamicsOptions::from_config(const Config& cfg) {
  DynamicsOptions o;
  o.v_min_floor = cfg.get_double("dynamics.v_min_floor", o.v_min_floor);
  o.literal_y_rate = cfg.get_bool("dynamics.literal_y_rate", o.literal_y_rate);
  return o;
}

InverseOptions InverseOptions::from_config(const Config& cfg) {
  InverseOptions o;
  o.reg_lambda = cfg.get_double("dynamics.reg_lambda", o.reg_lambda);
  o.tol_rot_frac = cfg.get_double("dynamics.tol_rot_frac", o.tol_rot_frac);
  o.v_min_floor = cfg.get_double("dynamics.v_min_floor", o.v_min_floor);
  return o;
}

FullContinuousState continuous_derivative(const FullContinuousState& state,
                                          double steer_rad, double accel_mps2,
                                          const VehicleAttributes& attrs,
                                          const DynamicsOptions& opts) {
  const double vx = state.kinematic.vx_mps;
  if (std::abs(vx) < opts.v_min_floor) throw NearZeroLongitudinalSpeed(vx);

  const double vy = state.kinematic.vy_mps;
  const double phi = state.yaw_rad;
  const double omega = state.yaw_rate_radps;
  const double m = attrs.mass_kg;
  const double iz = attrs.yaw_inertia_kg_m2;
  const double lf = attrs.dist_cg_front_m;
  const double lr = attrs.dist_cg_rear_m;
  const double kf = attrs.cornering_stiffness_front_N_per_rad;
  const double kr = attrs.cornering_stiffness_rear_N_per_rad;

  const double slip_front = (vy + lf * omega) / vx - steer_rad;
  const double slip_rear = (vy - lr * omega) / vx;
  const double front_force = kf * slip_front;
  const double rear_force = kr * slip_rear;
  const double cos_d = std::cos(steer_rad);
  const double sin_d = std::sin(steer_rad);

  FullContinuousState rate;
  rate.kinematic.x_m = vx * std::cos(phi) - vy * std::sin(phi);
  rate.kinematic.y_m = opts.literal_y_rate
                           ? vx * std::sin(phi) + vx * std::cos(phi)
                           : vx * std::sin(phi) + vy * std::cos(phi);
  rate.kinematic.vx_mps = accel_mps2 + vx * omega - front_force * sin_d / m;
  rate.kinematic.vy_mps =
      -vx * omega + (front_force * cos_d + rear_force) / m;
  rate.yaw_rad = omega;
  rate.yaw_rate_radps = (lf * front_force * cos_d - lr * rear_force) / iz;
  return rate;
}

FullContinuousState rk4_step(const FullContinuousState& state,
                             double steer_rad, double accel_mps2,
                             const VehicleAttributes& attrs, StepSpec spec,
                             const DynamicsOptions& opts) {
  const double dt = spec.dt_s;
  const auto advance = [](const FullContinuousState& s,
                          const FullContinuousState& r, double h) {
    FullContinuousState out;
    out.kinematic.x_m = s.kinematic.x_m + h * r.kinematic.x_m;
    out.kinematic.y_m = s.kinematic.y_m + h * r.kinematic.y_m;
    out.kinematic.vx_mps = s.kinematic.vx_mps + h * r.kinematic.vx_mps;
    out.kinematic.vy_mps = s.kinematic.vy_mps + h * r.kinematic.vy_mps;
    out.yaw_rad = s.yaw_rad + h * r.yaw_rad;
    out.yaw_rate_radps = s.yaw_rate_radps + h * r.yaw_rate_radps;
    return out;
  };

  const auto k1 = continuous_derivative(state, steer_rad, accel_mps2, attrs, opts);
  const auto k2 = continuous_derivative(advance(state, k1, 0.5 * dt), steer_rad,
                                        accel_mps2, attrs, opts);
  const auto k3 = continuous_derivative(advance(state, k2, 0.5 * dt), steer_rad,
                                        accel_mps2, attrs, opts);
  const auto k4 = continuous_derivative(advance(state, k3, dt), steer_rad,
                                        accel_mps2, attrs, opts);

  FullContinuousState sum = k1;
  sum.kinematic.x_m += 2.0 * k2.kinematic.x_m + 2.0 * k3.kinematic.x_m + k4.kinematic.x_m;
  sum.kinematic.y_m += 2.0 * k2.kinematic.y_m + 2.0 * k3.kinematic.y_m + k4.kinematic.y_m;
  sum.kinematic.vx_mps +=
      2.0 * k2.kinematic.vx_mps + 2.0 * k3.kinematic.vx_mps + k4.kinematic.vx_mps;
  sum.kinematic.vy_mps +=
      2.0 * k2.kinematic.vy_mps + 2.0 * k3.kinematic.vy_mps + k4.kinematic.vy_mps;
  sum.yaw_rad += 2.0 * k2.yaw_rad + 2.0 * k3.yaw_rad + k4.yaw_rad;
  sum.yaw_rate_radps +=
      2.0 * k2.yaw_rate_radps + 2.0 * k3.yaw_rate_radps + k4.yaw_rate_radps;
  return advance(state, sum, dt / 6.0);
}

KinematicState discrete_step(const KinematicState& state,
                             const ControlInput& ctrl,
                             const VehicleAttributes& attrs, StepSpec spec,
                             const DynamicsOptions& opts) {
  const double vx = state.vx_mps;
  if (std::abs(vx) < opts.v_min_floor) throw NearZeroLongitudinalSpeed(vx);

  const double vy = state.vy_mps;
  const double dt = spec.dt_s;
  const double m = attrs.mass_kg;
  const double lf = attrs.dist_cg_front_m;
  const double lr = attrs.dist_cg_rear_m;
  const double kf = attrs.cornering_stiffness_front_N_per_rad;
  const double kr = attrs.cornering_stiffness_rear_N_per_rad;
  const double cos_phi = std::cos(ctrl.yaw_rad);
  const double sin_phi = std::sin(ctrl.yaw_rad);

  const double denom = m * vx - dt * (kf + kr);
  if (denom == 0.0) throw SingularDenominator();

  KinematicState next;
  next.x_m = state.x_m + dt * (vx * cos_phi - vy * sin_phi);
  next.y_m = state.y_m + dt * (vy * cos_phi + vx * sin_phi);
  next.vx_mps = vx + dt * ctrl.accel_mps2;
  next.vy_mps = (m * vx * vy + dt * (lf * kf - lr * kr) * ctrl.yaw_rate_radps -
                 dt * kf * ctrl.steer_rad * vx -
                 dt * m * vx * vx * ctrl.yaw_rate_radps) /
                denom;
  return next;
}

ControlInput inverse_controls(const KinematicState& state_t,
                              const KinematicState& state_t1,
                              const VehicleAttributes& attrs, StepSpec spec,
                              const InverseOptions& opts) {
  const double vx = state_t.vx_mps;
  if (std::abs(vx) < opts.v_min_floor) throw NearZeroLongitudinalSpeed(vx);

  const double vy = state_t.vy_mps;
  const double dt = spec.dt_s;

  ControlInput ctrl;
  ctrl.accel_mps2 = (state_t1.vx_mps - vx) / dt;

  // Yaw: the position displacement is dt times the velocity rotated by phi,
  // so the best-fit angle comes from the cross/dot products of the two
  // vectors. A large residual after the fit means the pair of states is not
  // reachable by one discrete step.
  const double ux = vx * dt;
  const double uy = vy * dt;
  const double wx = state_t1.x_m - state_t.x_m;
  const double wy = state_t1.y_m - state_t.y_m;
  ctrl.yaw_rad = std::atan2(ux * wy - uy * wx, ux * wx + uy * wy);
  const double cos_phi = std::cos(ctrl.yaw_rad);
  const double sin_phi = std::sin(ctrl.yaw_rad);
  const double rx = ux * cos_phi - uy * sin_phi - wx;
  const double ry = ux * sin_phi + uy * cos_phi - wy;
  const double residual = std::hypot(rx, ry);
  const double tol = opts.tol_rot_frac * std::hypot(wx, wy);
  if (residual > tol) throw InconsistentDisplacement(residual, tol);

  // Lateral channel: one scalar equation in (omega, steer). Write it as
  // c_omega*omega + c_steer*steer = r and take the Tikhonov-regularized
  // minimum-norm solution theta = c * r / (|c|^2 + lambda).
  const double m = attrs.mass_kg;
  const double lf = attrs.dist_cg_front_m;
  const double lr = attrs.dist_cg_rear_m;
  const double kf = attrs.cornering_stiffness_front_N_per_rad;
  const double kr = attrs.cornering_stiffness_rear_N_per_rad;
  const double denom = m * vx - dt * (kf + kr);
  if (denom == 0.0) throw SingularDenominator();

  const double c_omega = dt * (lf * kf - lr * kr) - dt * m * vx * vx;
  const double c_steer = -dt * kf * vx;
  const double r = state_t1.vy_mps * denom - m * vx * vy;
  const double gain = r / (c_omega * c_omega + c_steer * c_steer + opts.reg_lambda);
  ctrl.yaw_rate_radps = c_omega * gain;
  ctrl.steer_rad = c_steer * gain;
  return ctrl;
}

std::vector<KinematicState> rollout(const KinematicState& initial,
                                    std::span<const ControlInput> controls,
                                    const VehicleAttributes& attrs,
                                    StepSpec spec,
                                    const DynamicsOptions& opts) {
  if (controls.empty()) throw EmptySequence();
  std::vector<KinematicState> out;
  out.reserve(controls.size());
  KinematicState current = initial;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    try {
      current = discrete_step(current, controls[k], attrs, spec, opts);
    } catch (const NumericError& e) {
      throw NumericError("rollout step " + std::to_string(k) + ": " +
                         e.what());
    }
    out.push_back(current);
  }
  return out;
}

}  // namespace demo
