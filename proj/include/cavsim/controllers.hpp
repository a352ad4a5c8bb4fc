#pragma once

#include <string>
#include <vector>

#include "cavsim/dynamics.hpp"

// Discrete high-level actions and the PID reference-control generator
// that turns an action target into a continuous (steering, acceleration)
// command for the shield to filter.

namespace cavsim {

enum class ActionKind {
    EmergencyStop,
    Maintain,
    LaneLeft,
    LaneRight,
    Brake,
    Accelerate,
};

struct ActionId {
    ActionKind kind = ActionKind::Maintain;
    int level = 0;  // 1..k_levels for Brake/Accelerate, 0 otherwise

    bool operator==(const ActionId&) const = default;
};

// Canonical indexing: 0 EmergencyStop, 1 Maintain, 2 LaneLeft, 3 LaneRight,
// 4..3+k Brake(1..k), 4+k..3+2k Accelerate(1..k).
int n_actions(int k_levels);
int action_index(const ActionId& a, int k_levels);
ActionId action_from_index(int idx, int k_levels);
std::vector<ActionId> action_space(int k_levels);
std::string action_name(const ActionId& a);

struct PidGains {
    // Lateral loop. The steering command is normalized by max(v, v_floor)
    // so the closed-loop poles stay put across the speed range; gains were
    // tuned in closed loop against the 0.6 m lane-change step (settles in
    // under 2.8 s at v in [0.5, 2], no overshoot past 0.017 m).
    double kp = 2.0;              // steering per m of cross-track
    double ki = 0.0;              // integral (clamped; off by default)
    double kd = 1.8;              // damping on the cross-track rate
    double v_floor = 0.5;         // normalization floor, m/s
    double kp_v = 1.5;            // longitudinal: accel per m/s of speed error
    double integral_clamp = 0.5;  // anti-windup bound on the integrator
};

struct ActionTarget {
    int target_lane = 0;
    double target_speed = 0.0;  // m/s
};

struct PidMemory {
    double integral = 0.0;
    double prev_error = 0.0;
};

struct EnvLimits {
    int n_lanes = 3;
    double v_min = 0.0;
    double v_max = 2.0;
    double dv = 0.5;  // speed increment per brake/accelerate level
};

// Maps an action onto a (lane, speed) target. Lane-change validity is the
// environment's job; an out-of-range destination lane throws.
ActionTarget action_to_target(const ActionId& action, int current_lane,
                              double current_target_speed,
                              const EnvLimits& lim);

// Steering from PID on cross-track error against the target-lane
// centerline (positive error = left of centerline steers right), with the
// damping term computed from the heading so it is exact on the first tick.
// Acceleration from proportional speed tracking. Both clamped to bounds.
ControlInput pid_control(const VehicleState& state, const ActionTarget& target,
                         double target_lane_center_y, const PidGains& gains,
                         const VehicleParams& vp, double dt, PidMemory& mem);

}  // namespace cavsim
