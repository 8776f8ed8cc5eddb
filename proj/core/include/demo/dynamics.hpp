#pragma once

#include <span>
#include <vector>

#include "demo/config.hpp"
#include "demo/errors.hpp"

namespace demo {

/// Inherent vehicle properties of the two-wheel lumped model.
/// Cornering stiffnesses are signed; the default convention is negative
/// (lateral tire force opposes slip), but the equations are valid under
/// either global sign choice as long as front and rear agree.
struct VehicleAttributes {
  double mass_kg = 1500.0;
  double yaw_inertia_kg_m2 = 2500.0;
  double dist_cg_front_m = 1.2;
  double dist_cg_rear_m = 1.6;
  double cornering_stiffness_front_N_per_rad = -1e5;
  double cornering_stiffness_rear_N_per_rad = -1e5;

  static VehicleAttributes from_config(const Config& cfg);
  void validate() const;
};

/// One vehicle sample: world position plus velocity components expressed in
/// the vehicle frame (x forward).
struct KinematicState {
  double x_m = 0.0;
  double y_m = 0.0;
  double vx_mps = 0.0;
  double vy_mps = 0.0;
};

/// State of the continuous model, where yaw angle and yaw rate are still
/// state variables.
struct FullContinuousState {
  KinematicState kinematic;
  double yaw_rad = 0.0;
  double yaw_rate_radps = 0.0;
};

/// Control vector driving one discrete step: (yaw, yaw rate, steer, accel).
struct ControlInput {
  double yaw_rad = 0.0;
  double yaw_rate_radps = 0.0;
  double steer_rad = 0.0;
  double accel_mps2 = 0.0;
};

struct StepSpec {
  double dt_s = 0.2;

  static StepSpec from_config(const Config& cfg);
  void validate() const;
};

struct DynamicsOptions {
  /// Guard on |v_x| below which the slip-angle division is singular.
  double v_min_floor = 0.5;
  /// Evaluate the uncorrected y-rate row of the continuous model
  /// (v_x sin(phi) + v_x cos(phi)) instead of the kinematically consistent
  /// one. Off by default; kept for side-by-side comparison.
  bool literal_y_rate = false;

  static DynamicsOptions from_config(const Config& cfg);
};

struct InverseOptions {
  /// Tikhonov weight for the under-determined (yaw-rate, steer) recovery.
  double reg_lambda = 1e-6;
  /// Rotation-fit residual tolerance, as a fraction of |delta position|.
  double tol_rot_frac = 0.05;
  double v_min_floor = 0.5;

  static InverseOptions from_config(const Config& cfg);
};

/// Time derivatives (xdot, ydot, vxdot, vydot, phidot, omegadot) of the
/// continuous model, returned in a FullContinuousState used as a rate
/// container. Throws NearZeroLongitudinalSpeed when |v_x| < v_min_floor.
FullContinuousState continuous_derivative(const FullContinuousState& state,
                                          double steer_rad, double accel_mps2,
                                          const VehicleAttributes& attrs,
                                          const DynamicsOptions& opts = {});

/// Classical fourth-order step of the continuous model with the controls
/// held constant over the step. Reference integrator for tests.
FullContinuousState rk4_step(const FullContinuousState& state,
                             double steer_rad, double accel_mps2,
                             const VehicleAttributes& attrs, StepSpec spec,
                             const DynamicsOptions& opts = {});

/// One step of the discrete model with yaw angle and yaw rate re-cast as
/// control inputs. Throws NearZeroLongitudinalSpeed / SingularDenominator.
KinematicState discrete_step(const KinematicState& state,
                             const ControlInput& ctrl,
                             const VehicleAttributes& attrs, StepSpec spec,
                             const DynamicsOptions& opts = {});

/// Recover the controls that map state_t to state_t1 under the discrete
/// model. Acceleration and yaw are recovered exactly; the single lateral
/// equation in (yaw rate, steer) is resolved to its minimum-norm
/// Tikhonov-regularized solution.
ControlInput inverse_controls(const KinematicState& state_t,
                              const KinematicState& state_t1,
                              const VehicleAttributes& attrs, StepSpec spec,
                              const InverseOptions& opts = {});

/// Apply discrete_step repeatedly; output[k] is the state after k+1 steps.
/// Step errors are rethrown with the failing step index prepended.
std::vector<KinematicState> rollout(const KinematicState& initial,
                                    std::span<const ControlInput> controls,
                                    const VehicleAttributes& attrs,
                                    StepSpec spec,
                                    const DynamicsOptions& opts = {});

}  // namespace demo
