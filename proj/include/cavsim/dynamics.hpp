#pragma once

// Kinematic bicycle model shared by every vehicle in the world.
// All functions here are pure; integration is forward Euler at the
// simulation tick (10 Hz), which keeps the motion and communication
// clocks aligned at one state exchange per control tick.

namespace cavsim {

struct VehicleState {
    double x = 0.0;    // longitudinal position, m (arc length along the lane)
    double y = 0.0;    // lateral position, m (positive = left of road center)
    double psi = 0.0;  // heading, rad, normalized to (-pi, pi]
    double v = 0.0;    // speed, m/s, clamped to [v_min, v_max]
};

struct StateRate {
    double dx = 0.0;
    double dy = 0.0;
    double dpsi = 0.0;
    double dv = 0.0;
};

struct ControlInput {
    double delta = 0.0;  // steering angle, rad
    double a = 0.0;      // longitudinal acceleration, m/s^2
};

struct VehicleParams {
    double wheelbase_L = 0.3;  // m
    double v_min = 0.0;        // m/s
    double v_max = 2.0;        // m/s
    double a_min = -2.0;       // m/s^2
    double a_max = 2.0;        // m/s^2
    double delta_max = 0.4;    // rad
};

// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

double clamp(double x, double lo, double hi);

// (v cos psi, v sin psi, (v/L) tan delta, a)
StateRate bicycle_derivative(const VehicleState& s, const ControlInput& u,
                             const VehicleParams& p);

// One forward-Euler tick. Clamps speed to [v_min, v_max], renormalizes
// heading. Throws std::domain_error on non-finite inputs.
VehicleState step(const VehicleState& s, const ControlInput& u,
                  const VehicleParams& p, double dt);

}  // namespace cavsim
