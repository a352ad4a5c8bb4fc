#pragma once

#include <vector>

#include "cavsim/controllers.hpp"
#include "cavsim/dynamics.hpp"

// Barrier-function evaluation, the analytic safety-filter QP and the
// per-action safe-set computation. Everything here is pure and works in
// arc-length coordinates along the lane: for ring tracks the caller
// expresses each neighbor so that (neighbor.x - ego.x) is the signed
// wrapped gap.

namespace cavsim {

enum class BarrierForm { QuadraticHeadway, LinearHeadway };

struct BarrierParams {
    BarrierForm form = BarrierForm::QuadraticHeadway;
    double c1 = 0.8;         // time-headway gain, s
    double c2 = 0.25;        // braking-headway gain, s^2/m (1/(2|a_min|))
    double c = 0.8;          // linear-headway gain, s
    double delta_gap = 0.5;  // standstill margin, m
    double cbf_gamma = 1.0;  // class-K gain, 1/s
};

struct QPResult {
    bool feasible = false;
    ControlInput u_star;
    double constraint_slack = 0.0;  // g_a * a_star - rhs
    bool intervened = false;        // u_star != u_ref beyond 1e-9
};

// Affine-in-acceleration constraint g_a * a >= rhs. Steering never enters.
struct ConstraintCoeffs {
    double g_a = 0.0;
    double rhs = 0.0;
};

// Candidate high-level action with the reference control the PID proposes
// for it. Invalid candidates (lane change off the road) are carried with
// valid=false so the report covers the whole action space.
struct ActionCandidate {
    ActionId action;
    bool valid = true;
    ControlInput u_ref;
    int target_lane = 0;
    int current_lane = 0;
};

// Neighboring vehicle (or static obstacle, v = 0) with the lane indices
// its footprint currently occupies.
struct LaneNeighbor {
    VehicleState state;
    std::vector<int> lanes;
};

struct SafeActionReport {
    std::vector<QPResult> per_action;  // indexed like the candidate list
    std::vector<int> safe_set;         // candidate indices with feasible QP
};

// Headway barrier h >= 0 defines the safe set. QuadraticHeadway encodes
// relative braking distance, LinearHeadway a fixed time headway plus
// standstill margin.
double barrier_value(const VehicleState& ego, const VehicleState& tar,
                     const BarrierParams& p);

// Coefficients of h's decay condition along the longitudinal dynamics,
// with the target's acceleration treated as zero.
ConstraintCoeffs cbf_constraint_coeffs(const VehicleState& ego,
                                       const VehicleState& tar,
                                       const BarrierParams& p);

// Minimizes 0.5*|u - u_ref|^2 under the affine constraint and the
// acceleration box, tightened so the next-step speed stays within limits.
// The constraint involves only the acceleration, so the minimizer is the
// analytic 1-D projection; steering passes through. An empty intersection
// gives feasible=false with the full-braking candidate as u_star.
QPResult solve_safety_qp(const ControlInput& u_ref, const ConstraintCoeffs& cs,
                         const VehicleState& state, const VehicleParams& vp,
                         double dt);

// One QPResult per candidate. The QP constrains against the binding
// leader over the lanes the ego occupies plus the candidate's target
// lane. Lane changes additionally require h >= 0 against both the
// preceding and the following vehicle in the destination lane (the
// following check swaps ego/target roles). EmergencyStop bypasses the QP:
// it is the fallback the caller takes when the safe set comes back empty,
// not a safe-set member. `footprint` is the bumper-to-bumper correction
// subtracted from every center-to-center gap (vehicle disc diameter);
// zero keeps gaps as given.
SafeActionReport safe_action_set(const std::vector<ActionCandidate>& candidates,
                                 const VehicleState& ego,
                                 const std::vector<int>& ego_lanes,
                                 const std::vector<LaneNeighbor>& neighbors,
                                 const BarrierParams& p,
                                 const VehicleParams& vp, double dt,
                                 double footprint = 0.0);

// Nearest neighbor ahead of (or behind) the ego among those occupying
// `lane`; returns -1 if none. Exposed for tests and observation assembly.
int preceding_in_lane(const VehicleState& ego, int lane,
                      const std::vector<LaneNeighbor>& neighbors);
int following_in_lane(const VehicleState& ego, int lane,
                      const std::vector<LaneNeighbor>& neighbors);

}  // namespace cavsim
