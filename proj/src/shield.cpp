#include "cavsim/shield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cavsim {

namespace {
constexpr double kIntervenedTol = 1e-9;
}

double barrier_value(const VehicleState& ego, const VehicleState& tar,
                     const BarrierParams& p) {
    const double gap = tar.x - ego.x;
    if (p.form == BarrierForm::QuadraticHeadway) {
        return gap - (p.c1 * ego.v + p.c2 * (ego.v * ego.v - tar.v * tar.v));
    }
    return gap - p.c * ego.v - p.delta_gap;
}

ConstraintCoeffs cbf_constraint_coeffs(const VehicleState& ego,
                                       const VehicleState& tar,
                                       const BarrierParams& p) {
    const double h = barrier_value(ego, tar, p);
    const double dv = tar.v - ego.v;
    ConstraintCoeffs cs;
    if (p.form == BarrierForm::QuadraticHeadway) {
        cs.g_a = -(p.c1 + 2.0 * p.c2 * ego.v);
    } else {
        cs.g_a = -p.c;
    }
    cs.rhs = -p.cbf_gamma * h - dv;
    return cs;
}

QPResult solve_safety_qp(const ControlInput& u_ref, const ConstraintCoeffs& cs,
                         const VehicleState& state, const VehicleParams& vp,
                         double dt) {
    // Acceleration box tightened so the next Euler step keeps the speed
    // within [v_min, v_max].
    const double lo = std::max(vp.a_min, (vp.v_min - state.v) / dt);
    const double hi = std::min(vp.a_max, (vp.v_max - state.v) / dt);

    QPResult r;
    r.u_star.delta = u_ref.delta;

    double flo = lo, fhi = hi;
    if (cs.g_a > 0.0) {
        flo = std::max(flo, cs.rhs / cs.g_a);
    } else if (cs.g_a < 0.0) {
        fhi = std::min(fhi, cs.rhs / cs.g_a);
    } else if (cs.rhs > 0.0) {
        // Constraint does not involve a and cannot be met.
        flo = std::numeric_limits<double>::infinity();
    }

    if (flo <= fhi) {
        r.feasible = true;
        r.u_star.a = clamp(u_ref.a, flo, fhi);
    } else {
        r.feasible = false;
        r.u_star.a = vp.a_min;  // most conservative candidate; caller decides
    }
    r.constraint_slack = cs.g_a * r.u_star.a - cs.rhs;
    r.intervened = std::abs(r.u_star.a - u_ref.a) > kIntervenedTol ||
                   std::abs(r.u_star.delta - u_ref.delta) > kIntervenedTol;
    return r;
}

namespace {

bool occupies(const LaneNeighbor& n, int lane) {
    return std::find(n.lanes.begin(), n.lanes.end(), lane) != n.lanes.end();
}

}  // namespace

int preceding_in_lane(const VehicleState& ego, int lane,
                      const std::vector<LaneNeighbor>& neighbors) {
    int best = -1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < neighbors.size(); ++i) {
        if (!occupies(neighbors[i], lane)) continue;
        const double gap = neighbors[i].state.x - ego.x;
        if (gap > 0.0 && gap < best_gap) {
            best_gap = gap;
            best = static_cast<int>(i);
        }
    }
    return best;
}

int following_in_lane(const VehicleState& ego, int lane,
                      const std::vector<LaneNeighbor>& neighbors) {
    int best = -1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < neighbors.size(); ++i) {
        if (!occupies(neighbors[i], lane)) continue;
        const double gap = ego.x - neighbors[i].state.x;
        if (gap >= 0.0 && gap < best_gap) {
            best_gap = gap;
            best = static_cast<int>(i);
        }
    }
    return best;
}

SafeActionReport safe_action_set(const std::vector<ActionCandidate>& candidates,
                                 const VehicleState& ego,
                                 const std::vector<int>& ego_lanes,
                                 const std::vector<LaneNeighbor>& neighbors,
                                 const BarrierParams& p,
                                 const VehicleParams& vp, double dt,
                                 double footprint) {
    SafeActionReport report;
    report.per_action.resize(candidates.size());

    // Bumper-referenced copy of a leader state.
    auto lead_state = [&](int idx) {
        VehicleState s = neighbors[idx].state;
        s.x -= footprint;
        return s;
    };

    for (size_t ci = 0; ci < candidates.size(); ++ci) {
        const ActionCandidate& cand = candidates[ci];
        QPResult& qp = report.per_action[ci];

        if (!cand.valid) {
            qp = QPResult{};
            qp.u_star = cand.u_ref;
            continue;
        }
        if (cand.action.kind == ActionKind::EmergencyStop) {
            // The unconditional fallback. It bypasses the QP, so it is
            // never a safe-set member (feasible marks QP-validated
            // actions only); selection falls back to it when the set is
            // empty. u_star carries the full-braking command.
            qp.feasible = false;
            qp.u_star = cand.u_ref;
            qp.intervened = false;
            continue;
        }

        const bool lane_change = cand.target_lane != cand.current_lane;

        // Leaders to respect: the occupied lanes plus the lane this action
        // steers toward. g_a depends only on the ego, so the binding
        // constraint is simply the one with the largest rhs.
        std::vector<int> lanes = ego_lanes;
        if (std::find(lanes.begin(), lanes.end(), cand.target_lane) == lanes.end())
            lanes.push_back(cand.target_lane);
        bool have_lead = false;
        ConstraintCoeffs binding{};
        int target_lead = -1;
        for (int lane : lanes) {
            const int li = preceding_in_lane(ego, lane, neighbors);
            if (li < 0) continue;
            if (lane == cand.target_lane) target_lead = li;
            const ConstraintCoeffs cs = cbf_constraint_coeffs(ego, lead_state(li), p);
            if (!have_lead || cs.rhs > binding.rhs) binding = cs;
            have_lead = true;
        }

        if (!have_lead) {
            qp.feasible = true;
            qp.u_star = cand.u_ref;
            qp.intervened = false;
        } else {
            qp = solve_safety_qp(cand.u_ref, binding, ego, vp, dt);
        }

        if (lane_change && qp.feasible) {
            // Entering a lane needs clearance on both sides.
            if (target_lead >= 0 &&
                barrier_value(ego, lead_state(target_lead), p) < 0.0) {
                qp.feasible = false;
            }
            const int rear = following_in_lane(ego, cand.target_lane, neighbors);
            if (rear >= 0) {
                VehicleState follower = neighbors[rear].state;
                follower.x += footprint;
                if (barrier_value(follower, ego, p) < 0.0) qp.feasible = false;
            }
        }

        if (qp.feasible) report.safe_set.push_back(static_cast<int>(ci));
    }
    return report;
}

}  // namespace cavsim
