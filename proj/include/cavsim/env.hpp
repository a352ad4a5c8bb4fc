#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "cavsim/comm.hpp"
#include "cavsim/controllers.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/shield.hpp"

// The multi-lane highway world: geometry, obstacles, observation assembly,
// reward computation, episode stepping and metrics. One World instance is
// single-owner per episode; independent episodes (different seeds) can run
// in parallel.

namespace cavsim {

enum class TrackGeometry { Straight, Loop };

struct ObstacleSpec {
    int lane = 0;
    double x = 0.0;
};

struct ScenarioConfig {
    std::string name = "default";
    int n_lanes = 3;
    double lane_width = 0.6;    // m
    double track_length = 20.0; // m
    TrackGeometry geometry = TrackGeometry::Straight;
    int n_agents = 3;
    std::vector<ObstacleSpec> obstacles;
    std::vector<int> spawn_lane;   // default: agent i -> lane i % n_lanes
    std::vector<double> spawn_x;   // default: 0
    std::vector<double> goal_x;    // default: track_length - 2 (Straight)
    double initial_speed = 0.0;
    double initial_target_speed = 1.5;
    int episode_len = 400;  // ticks
    double dt = 0.1;        // s
    double vehicle_radius = 0.18;  // disc footprint, m
    int n_rays = 8;
    double ray_max = 5.0;  // m
    int k_levels = 2;      // brake/accelerate levels
    double dv = 0.5;       // m/s per level
};

struct RewardWeights {
    // direct-form mode
    double w1 = 1.0;  // speed
    double w2 = 5.0;  // collision (applied as a penalty)
    double w3 = 1.0;  // progress toward goal
    // decomposed mode
    double alpha_mix = 1.0;     // team-average weight
    double flow_coef = 3.0;
    double interpolate = 1.0;
    double v_ref = 1.0;         // m/s (= 3.6 km/h)
    double safe_match_bonus = 0.1;
    double safe_stop_penalty = -0.3;
    double collision_scale = 40.0;
    // proximity penalty of the ray-based variant; off by default
    bool use_prox_penalty = false;
    double prox_threshold = 0.5;  // m
    double prox_penalty = -1.0;
};

struct Toggles {
    bool shield = true;
    bool lambda_frozen = false;  // consumed by the trainer
};

struct SimConfig {
    ScenarioConfig scenario;
    VehicleParams vehicle;
    BarrierParams barrier;
    PidGains pid;
    RewardWeights reward;
    ChannelConfig channel;
    Toggles toggles;
    double discount_gamma = 0.99;  // used for the efficiency-return metric
};

struct Observation {
    double x = 0.0, y = 0.0;
    int lane = 0;
    double v = 0.0;
    double alpha = 0.0;  // last applied acceleration
    double d_left = 0.0, d_right = 0.0, d_heading = 0.0;
    std::vector<double> rays;
};

struct NeighborSlot {
    bool present = false;
    double dx = 0.0, dy = 0.0;
    double v = 0.0, psi = 0.0;
    int intended_action = 1;
};

struct AgentView {
    Observation obs;
    std::vector<NeighborSlot> neighbors;
};

// Fixed affine scaling by world bounds so encoding is stateless and
// identical between training and execution.
struct ObsCodec {
    int n_rays = 8;
    int max_neighbors = 2;
    int n_actions = 8;
    double track_length = 20.0;
    double road_half_width = 0.9;
    double lane_width = 0.6;
    double v_max = 2.0;
    double a_bound = 2.0;
    double ray_max = 5.0;
    int n_lanes = 3;

    int dim() const { return 8 + n_rays + 6 * max_neighbors; }
    void encode(const AgentView& view, double* out) const;
};

struct RewardTerms {
    double flow = 0.0;
    double dest = 0.0;
    double coll = 0.0;
    double safe = 0.0;
    double task = 0.0;   // alpha-mixed flow+dest part (efficiency basis)
    double total = 0.0;
};

// r = w1*v - w2*I + w3*progress
double reward_simple(const Observation& obs, double collision_intensity,
                     double progress_m, const RewardWeights& w);

struct RewardInputs {
    double speed = 0.0;
    double progress_frac = 0.0;  // (x - spawn)/(goal - spawn)
    double collision_intensity_sum = 0.0;
    bool collision_event = false;
    bool chosen_matches_executed = true;
    bool executed_emergency_stop = false;
    bool counted = true;  // participates in this tick's team average
    double min_ray = 1e9;
};

std::vector<RewardTerms> reward_decomposed(const std::vector<RewardInputs>& in,
                                           const RewardWeights& w);

struct AgentStepInfo {
    RewardTerms reward;
    bool collided = false;
    double collision_intensity = 0.0;
    bool done = false;
    bool intervened = false;
    int chosen = 1;
    int executed = 1;
    double h_lead = 1e9;  // barrier vs true preceding vehicle, 1e9 if none
};

struct StepOutcome {
    long tick = 0;  // tick that was just executed
    std::vector<AgentStepInfo> agents;
    bool all_done = false;
};

struct TraceAgentRecord {
    double x = 0.0, y = 0.0, psi = 0.0, v = 0.0;
    int lane = 0;
    int chosen = 1, executed = 1;
    bool intervened = false;
    bool collided = false;
    double collision_intensity = 0.0;
    double h_lead = 1e9;
    RewardTerms reward;
    bool stepped = false;   // agent was active at the start of the tick
    bool finished = false;  // reached its goal at or before this tick
};

struct TraceTick {
    long tick = 0;
    int new_collision_events = 0;
    std::vector<TraceAgentRecord> agents;
};

struct Metrics {
    int collisions = 0;
    double time_s = 0.0;
    double efficiency_return = 0.0;
    double intervention_rate = 0.0;
};

// Recomputes episode metrics from a trace (efficiency return uses only the
// task part of the reward; penalties never enter).
Metrics episode_metrics(const std::vector<TraceTick>& trace,
                        double discount_gamma, double dt, int episode_len,
                        bool shield_enabled);

enum class AgentStatus { Active, Finished, Crashed };

class World {
  public:
    World(const SimConfig& cfg, std::uint64_t seed);

    void reset();
    void reset(std::uint64_t seed);

    int n_agents() const { return cfg_.scenario.n_agents; }
    int n_actions() const { return ::cavsim::n_actions(cfg_.scenario.k_levels); }
    long tick() const { return tick_; }
    bool episode_over() const;
    const SimConfig& config() const { return cfg_; }
    const ObsCodec& codec() const { return codec_; }

    // Per-action shield report for this tick (valid-action masking applied;
    // with the shield disabled every valid action is reported feasible).
    const SafeActionReport& shield_report(int agent) const;
    // Indices the policy may pick from: safe set when the shield is on,
    // valid set otherwise. Never empty (EmergencyStop is always in it).
    std::vector<int> selectable(int agent) const;

    AgentView view(int agent) const;
    std::vector<double> obs_vec(int agent) const;
    std::vector<double> joint_obs_vec() const;  // centralized critic input

    StepOutcome step(const std::vector<int>& chosen_actions);

    Metrics metrics() const;
    const std::vector<TraceTick>& trace() const { return trace_; }
    Bus& bus() { return *bus_; }
    // survives reset (the bus is rebuilt per episode)
    void set_channel_trace(bool on) { channel_trace_ = on; if (bus_) bus_->set_trace(on); }

    const VehicleState& vehicle(int i) const { return agents_[i].state; }
    AgentStatus status(int i) const { return agents_[i].status; }
    double lane_center_y(int lane) const;
    int nearest_lane(double y) const;

  private:
    struct Agent {
        VehicleState state;
        PidMemory pid;
        int target_lane = 0;
        double target_speed = 0.0;
        double last_a = 0.0;
        double progress = 0.0;  // unwrapped distance from spawn
        AgentStatus status = AgentStatus::Active;
        long done_tick = -1;
        int last_action = 1;
    };

    double wrap_dx(double dx) const;
    std::vector<int> occupied_lanes(double y) const;
    std::vector<LaneNeighbor> shield_neighbors(int agent) const;
    std::vector<ActionCandidate> build_candidates(int agent) const;
    void refresh_tick_cache();
    SharedPayload payload_of(const Agent& a, int last_action) const;
    double cast_ray(int agent, double angle) const;
    void validate_config() const;

    SimConfig cfg_;
    ObsCodec codec_;
    std::uint64_t seed_ = 0;
    std::mt19937_64 env_rng_;
    long tick_ = 0;
    std::vector<Agent> agents_;
    std::optional<Bus> bus_;
    std::vector<std::vector<std::optional<SharedPayload>>> views_;
    std::vector<SafeActionReport> reports_;
    std::vector<std::vector<ActionCandidate>> candidates_;
    bool channel_trace_ = false;
    std::set<std::pair<int, int>> contacts_;  // vehicle-vehicle (i<j) and (i, -1-k) for obstacle k
    std::vector<TraceTick> trace_;
    int collision_events_ = 0;
    long intervened_ticks_ = 0;
    long stepped_ticks_ = 0;
};

}  // namespace cavsim
