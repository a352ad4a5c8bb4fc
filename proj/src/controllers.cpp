#include "cavsim/controllers.hpp"

#include <cmath>
#include <stdexcept>

namespace cavsim {

int n_actions(int k_levels) { return 4 + 2 * k_levels; }

int action_index(const ActionId& a, int k_levels) {
    switch (a.kind) {
        case ActionKind::EmergencyStop: return 0;
        case ActionKind::Maintain: return 1;
        case ActionKind::LaneLeft: return 2;
        case ActionKind::LaneRight: return 3;
        case ActionKind::Brake: return 3 + a.level;
        case ActionKind::Accelerate: return 3 + k_levels + a.level;
    }
    return 1;
}

ActionId action_from_index(int idx, int k_levels) {
    if (idx == 0) return {ActionKind::EmergencyStop, 0};
    if (idx == 1) return {ActionKind::Maintain, 0};
    if (idx == 2) return {ActionKind::LaneLeft, 0};
    if (idx == 3) return {ActionKind::LaneRight, 0};
    if (idx <= 3 + k_levels) return {ActionKind::Brake, idx - 3};
    if (idx <= 3 + 2 * k_levels) return {ActionKind::Accelerate, idx - 3 - k_levels};
    throw std::out_of_range("action index out of range");
}

std::vector<ActionId> action_space(int k_levels) {
    std::vector<ActionId> out;
    for (int i = 0; i < n_actions(k_levels); ++i)
        out.push_back(action_from_index(i, k_levels));
    return out;
}

std::string action_name(const ActionId& a) {
    switch (a.kind) {
        case ActionKind::EmergencyStop: return "EmergencyStop";
        case ActionKind::Maintain: return "Maintain";
        case ActionKind::LaneLeft: return "LaneLeft";
        case ActionKind::LaneRight: return "LaneRight";
        case ActionKind::Brake: return "Brake" + std::to_string(a.level);
        case ActionKind::Accelerate: return "Accelerate" + std::to_string(a.level);
    }
    return "?";
}

ActionTarget action_to_target(const ActionId& action, int current_lane,
                              double current_target_speed,
                              const EnvLimits& lim) {
    ActionTarget t;
    t.target_lane = current_lane;
    t.target_speed = clamp(current_target_speed, lim.v_min, lim.v_max);
    switch (action.kind) {
        case ActionKind::EmergencyStop:
            t.target_speed = 0.0;
            break;
        case ActionKind::Maintain:
            break;
        case ActionKind::LaneLeft:
            t.target_lane = current_lane - 1;
            break;
        case ActionKind::LaneRight:
            t.target_lane = current_lane + 1;
            break;
        case ActionKind::Brake:
            t.target_speed = clamp(current_target_speed - action.level * lim.dv,
                                   lim.v_min, lim.v_max);
            break;
        case ActionKind::Accelerate:
            t.target_speed = clamp(current_target_speed + action.level * lim.dv,
                                   lim.v_min, lim.v_max);
            break;
    }
    if (t.target_lane < 0 || t.target_lane >= lim.n_lanes)
        throw std::invalid_argument("action_to_target: destination lane does not exist");
    return t;
}

ControlInput pid_control(const VehicleState& state, const ActionTarget& target,
                         double target_lane_center_y, const PidGains& gains,
                         const VehicleParams& vp, double dt, PidMemory& mem) {
    // Lanes run along +x, so the heading reference is 0 and cross-track
    // error is just the lateral offset.
    const double e = state.y - target_lane_center_y;
    const double e_rate = state.v * std::sin(state.psi);

    mem.integral = clamp(mem.integral + e * dt, -gains.integral_clamp,
                         gains.integral_clamp);
    mem.prev_error = e;

    const double vn = std::max(state.v, gains.v_floor);
    ControlInput u;
    u.delta = clamp(
        -(gains.kp * e + gains.ki * mem.integral + gains.kd * e_rate) / vn,
        -vp.delta_max, vp.delta_max);
    u.a = clamp(gains.kp_v * (target.target_speed - state.v), vp.a_min, vp.a_max);
    return u;
}

}  // namespace cavsim
