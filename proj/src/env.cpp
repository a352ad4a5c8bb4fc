#include "cavsim/env.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace cavsim {

namespace {

constexpr double kKmhPerMs = 3.6;

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

void ObsCodec::encode(const AgentView& view, double* out) const {
    const Observation& o = view.obs;
    int k = 0;
    out[k++] = o.x / track_length;
    out[k++] = o.y / road_half_width;
    out[k++] = n_lanes > 1 ? static_cast<double>(o.lane) / (n_lanes - 1) : 0.0;
    out[k++] = o.v / v_max;
    out[k++] = o.alpha / a_bound;
    out[k++] = o.d_left / lane_width;
    out[k++] = o.d_right / lane_width;
    out[k++] = o.d_heading / M_PI;
    for (int r = 0; r < n_rays; ++r) out[k++] = o.rays[r] / ray_max;
    for (int n = 0; n < max_neighbors; ++n) {
        if (n < static_cast<int>(view.neighbors.size()) &&
            view.neighbors[n].present) {
            const NeighborSlot& s = view.neighbors[n];
            out[k++] = 1.0;
            out[k++] = s.dx / (0.5 * track_length);
            out[k++] = s.dy / (2.0 * road_half_width);
            out[k++] = s.v / v_max;
            out[k++] = s.psi / M_PI;
            out[k++] = n_actions > 1
                           ? static_cast<double>(s.intended_action) / (n_actions - 1)
                           : 0.0;
        } else {
            for (int j = 0; j < 6; ++j) out[k++] = 0.0;
        }
    }
    assert(k == dim());
}

double reward_simple(const Observation& obs, double collision_intensity,
                     double progress_m, const RewardWeights& w) {
    return w.w1 * obs.v - w.w2 * collision_intensity + w.w3 * progress_m;
}

std::vector<RewardTerms> reward_decomposed(const std::vector<RewardInputs>& in,
                                           const RewardWeights& w) {
    std::vector<RewardTerms> out(in.size());
    double flow_sum = 0.0, dest_sum = 0.0;
    int counted = 0;
    for (size_t i = 0; i < in.size(); ++i) {
        RewardTerms& t = out[i];
        t.flow = 0.2 * w.flow_coef * (in[i].speed - w.v_ref) / kKmhPerMs;
        t.dest = in[i].progress_frac / w.interpolate;
        if (in[i].collision_event) {
            t.coll = -(in[i].collision_intensity_sum / w.collision_scale + 1.0);
        }
        if (w.use_prox_penalty && in[i].min_ray < w.prox_threshold) {
            t.coll += w.prox_penalty;
        }
        if (in[i].executed_emergency_stop) {
            t.safe = w.safe_stop_penalty;
        } else if (in[i].chosen_matches_executed) {
            t.safe = w.safe_match_bonus;
        }
        if (in[i].counted) {
            flow_sum += t.flow;
            dest_sum += t.dest;
            ++counted;
        }
    }
    const double flow_bar = counted ? flow_sum / counted : 0.0;
    const double dest_bar = counted ? dest_sum / counted : 0.0;
    for (size_t i = 0; i < in.size(); ++i) {
        RewardTerms& t = out[i];
        if (!in[i].counted) {
            t = RewardTerms{};
            continue;
        }
        t.task = w.alpha_mix * (flow_bar + dest_bar) +
                 (1.0 - w.alpha_mix) * (t.flow + t.dest);
        t.total = t.task + t.coll + t.safe;
    }
    return out;
}

Metrics episode_metrics(const std::vector<TraceTick>& trace,
                        double discount_gamma, double dt, int episode_len,
                        bool shield_enabled) {
    Metrics m;
    if (trace.empty()) {
        m.time_s = episode_len * dt;
        return m;
    }
    const size_t n = trace.front().agents.size();
    std::vector<double> eff(n, 0.0);
    std::vector<long> finish_tick(n, -1);
    long intervened = 0, stepped = 0;
    double disc = 1.0;
    for (const auto& tk : trace) {
        for (size_t i = 0; i < n; ++i) {
            const TraceAgentRecord& a = tk.agents[i];
            eff[i] += disc * a.reward.task;
            if (a.stepped) {
                ++stepped;
                if (a.intervened) ++intervened;
            }
            if (a.finished && finish_tick[i] < 0) finish_tick[i] = tk.tick;
        }
        m.collisions += tk.new_collision_events;
        disc *= discount_gamma;
    }
    double eff_sum = 0.0;
    for (double e : eff) eff_sum += e;
    m.efficiency_return = n ? eff_sum / static_cast<double>(n) : 0.0;

    long last = 0;
    bool all_finished = true;
    for (size_t i = 0; i < n; ++i) {
        if (finish_tick[i] < 0) all_finished = false;
        last = std::max(last, finish_tick[i] + 1);
    }
    m.time_s = all_finished ? last * dt : episode_len * dt;
    m.intervention_rate =
        (shield_enabled && stepped > 0)
            ? static_cast<double>(intervened) / static_cast<double>(stepped)
            : 0.0;
    return m;
}

World::World(const SimConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.scenario.spawn_lane.empty()) {
        for (int i = 0; i < cfg_.scenario.n_agents; ++i)
            cfg_.scenario.spawn_lane.push_back(i % cfg_.scenario.n_lanes);
    }
    if (cfg_.scenario.spawn_x.empty()) {
        cfg_.scenario.spawn_x.assign(cfg_.scenario.n_agents, 0.0);
    }
    if (cfg_.scenario.goal_x.empty()) {
        cfg_.scenario.goal_x.assign(cfg_.scenario.n_agents,
                                    cfg_.scenario.track_length - 2.0);
    }
    validate_config();

    codec_.n_rays = cfg_.scenario.n_rays;
    codec_.max_neighbors = cfg_.scenario.n_agents - 1;
    codec_.n_actions = n_actions();
    codec_.track_length = cfg_.scenario.track_length;
    codec_.road_half_width = 0.5 * cfg_.scenario.n_lanes * cfg_.scenario.lane_width;
    codec_.lane_width = cfg_.scenario.lane_width;
    codec_.v_max = cfg_.vehicle.v_max;
    codec_.a_bound = std::max(std::abs(cfg_.vehicle.a_min), cfg_.vehicle.a_max);
    codec_.ray_max = cfg_.scenario.ray_max;
    codec_.n_lanes = cfg_.scenario.n_lanes;

    reset(seed);
}

void World::validate_config() const {
    const ScenarioConfig& sc = cfg_.scenario;
    if (sc.n_lanes < 1) throw std::invalid_argument("config: n_lanes must be >= 1");
    if (sc.n_agents < 1) throw std::invalid_argument("config: n_agents must be >= 1");
    if (sc.dt <= 0.0) throw std::invalid_argument("config: dt must be positive");
    if (static_cast<int>(sc.spawn_lane.size()) != sc.n_agents ||
        static_cast<int>(sc.spawn_x.size()) != sc.n_agents ||
        static_cast<int>(sc.goal_x.size()) != sc.n_agents) {
        throw std::invalid_argument("config: spawn/goal lists must match n_agents");
    }
    for (int i = 0; i < sc.n_agents; ++i) {
        if (sc.spawn_lane[i] < 0 || sc.spawn_lane[i] >= sc.n_lanes)
            throw std::invalid_argument("config: spawn lane out of range");
        if (sc.geometry == TrackGeometry::Straight && sc.spawn_x[i] >= sc.goal_x[i])
            throw std::invalid_argument("config: spawn_x must precede goal_x");
    }
    for (const auto& ob : sc.obstacles) {
        if (ob.lane < 0 || ob.lane >= sc.n_lanes)
            throw std::invalid_argument("config: obstacle lane out of range");
        if (ob.x < 0.0 || ob.x > sc.track_length)
            throw std::invalid_argument("config: obstacle outside the track");
    }
    for (int i = 0; i < sc.n_agents; ++i) {
        for (int j = i + 1; j < sc.n_agents; ++j) {
            if (sc.spawn_lane[i] == sc.spawn_lane[j] &&
                std::abs(sc.spawn_x[i] - sc.spawn_x[j]) < 2.0 * sc.vehicle_radius)
                throw std::invalid_argument("config: overlapping agent spawns");
        }
        for (const auto& ob : sc.obstacles) {
            if (sc.spawn_lane[i] == ob.lane &&
                std::abs(sc.spawn_x[i] - ob.x) < 2.0 * sc.vehicle_radius)
                throw std::invalid_argument("config: agent spawns on an obstacle");
        }
    }
    if (cfg_.channel.dropout_p < 0.0 || cfg_.channel.dropout_p >= 1.0)
        throw std::invalid_argument("config: dropout_p must be in [0, 1)");
    if (cfg_.channel.t_delay < 0)
        throw std::invalid_argument("config: t_delay must be >= 0");
}

double World::lane_center_y(int lane) const {
    return (0.5 * (cfg_.scenario.n_lanes - 1) - lane) * cfg_.scenario.lane_width;
}

int World::nearest_lane(double y) const {
    const int n = cfg_.scenario.n_lanes;
    const double idx = 0.5 * (n - 1) - y / cfg_.scenario.lane_width;
    const int lane = static_cast<int>(std::lround(idx));
    return std::clamp(lane, 0, n - 1);
}

double World::wrap_dx(double dx) const {
    if (cfg_.scenario.geometry != TrackGeometry::Loop) return dx;
    const double L = cfg_.scenario.track_length;
    dx = std::fmod(dx, L);
    if (dx > 0.5 * L) dx -= L;
    if (dx <= -0.5 * L) dx += L;
    return dx;
}

std::vector<int> World::occupied_lanes(double y) const {
    std::vector<int> lanes;
    const double half = 0.5 * cfg_.scenario.lane_width + cfg_.scenario.vehicle_radius;
    for (int l = 0; l < cfg_.scenario.n_lanes; ++l) {
        if (std::abs(y - lane_center_y(l)) < half) lanes.push_back(l);
    }
    return lanes;
}

void World::reset() { reset(seed_); }

void World::reset(std::uint64_t seed) {
    seed_ = seed;
    env_rng_.seed(mix64(seed ^ 0x5eedULL));
    tick_ = 0;
    trace_.clear();
    contacts_.clear();
    collision_events_ = 0;
    intervened_ticks_ = 0;
    stepped_ticks_ = 0;

    const ScenarioConfig& sc = cfg_.scenario;
    agents_.assign(sc.n_agents, Agent{});
    for (int i = 0; i < sc.n_agents; ++i) {
        Agent& a = agents_[i];
        a.state.x = sc.spawn_x[i];
        a.state.y = lane_center_y(sc.spawn_lane[i]);
        a.state.psi = 0.0;
        a.state.v = clamp(sc.initial_speed, cfg_.vehicle.v_min, cfg_.vehicle.v_max);
        a.target_lane = sc.spawn_lane[i];
        a.target_speed = clamp(sc.initial_target_speed, cfg_.vehicle.v_min,
                               cfg_.vehicle.v_max);
        a.last_a = 0.0;
        a.progress = 0.0;
        a.status = AgentStatus::Active;
        a.done_tick = -1;
        a.last_action = 1;
    }

    ChannelConfig ch = cfg_.channel;
    ch.seed = mix64(ch.seed ^ mix64(seed));
    bus_.emplace(sc.n_agents, ch);
    bus_->set_trace(channel_trace_);
    std::vector<SharedPayload> payloads;
    for (const Agent& a : agents_) payloads.push_back(payload_of(a, 1));
    bus_->seed_initial(payloads);
    views_ = bus_->views(0);
    refresh_tick_cache();
}

SharedPayload World::payload_of(const Agent& a, int last_action) const {
    SharedPayload p;
    p.x = a.state.x;
    p.y = a.state.y;
    p.psi = a.state.psi;
    p.v = a.state.v;
    p.intended_action = last_action;
    p.intent_lane = a.target_lane;
    return p;
}

std::vector<LaneNeighbor> World::shield_neighbors(int agent) const {
    // Neighboring vehicles come from the (possibly delayed and noisy)
    // broadcast views; static obstacles are map knowledge and enter fresh.
    // Positions are bumper-referenced: the footprint diameter is removed
    // from each leader gap via the safe_action_set footprint argument, so
    // here we only re-express x so that (n.x - ego.x) is a wrapped gap.
    std::vector<LaneNeighbor> out;
    const VehicleState& ego = agents_[agent].state;
    for (int j = 0; j < cfg_.scenario.n_agents; ++j) {
        if (j == agent) continue;
        if (agents_[j].status == AgentStatus::Finished) continue;
        const auto& p = views_[agent][j];
        if (!p) continue;
        LaneNeighbor n;
        n.state.x = ego.x + wrap_dx(p->x - ego.x);
        n.state.y = p->y;
        n.state.psi = p->psi;
        n.state.v = p->v;
        n.lanes = occupied_lanes(p->y);
        // Shared intent: a neighbor committed to a lane change claims its
        // destination for the whole maneuver, so simultaneous merges into
        // the same gap get gated before the footprints ever meet.
        if (p->intent_lane >= 0 && p->intent_lane < cfg_.scenario.n_lanes &&
            std::find(n.lanes.begin(), n.lanes.end(), p->intent_lane) ==
                n.lanes.end()) {
            n.lanes.push_back(p->intent_lane);
        }
        out.push_back(std::move(n));
    }
    for (const auto& ob : cfg_.scenario.obstacles) {
        LaneNeighbor n;
        const double oy = lane_center_y(ob.lane);
        n.state.x = ego.x + wrap_dx(ob.x - ego.x);
        n.state.y = oy;
        n.state.psi = 0.0;
        n.state.v = 0.0;
        n.lanes = occupied_lanes(oy);
        out.push_back(std::move(n));
    }
    return out;
}

std::vector<ActionCandidate> World::build_candidates(int agent) const {
    const Agent& a = agents_[agent];
    EnvLimits lim{cfg_.scenario.n_lanes, cfg_.vehicle.v_min, cfg_.vehicle.v_max,
                  cfg_.scenario.dv};
    // A lane change completes when the cross-track error to the new
    // centerline falls under 5 cm; until then further lane changes are
    // masked, so a committed maneuver keeps its destination lane inside
    // the shield's constraint set for the whole transit.
    const bool mid_change =
        std::abs(a.state.y - lane_center_y(a.target_lane)) > 0.05;
    std::vector<ActionCandidate> out;
    for (const ActionId& act : action_space(cfg_.scenario.k_levels)) {
        ActionCandidate c;
        c.action = act;
        c.current_lane = a.target_lane;
        const bool is_change = act.kind == ActionKind::LaneLeft ||
                               act.kind == ActionKind::LaneRight;
        c.valid = !(act.kind == ActionKind::LaneLeft && a.target_lane == 0) &&
                  !(act.kind == ActionKind::LaneRight &&
                    a.target_lane == cfg_.scenario.n_lanes - 1) &&
                  !(is_change && mid_change);
        if (!c.valid) {
            c.target_lane = a.target_lane;
            out.push_back(c);
            continue;
        }
        const ActionTarget tgt =
            action_to_target(act, a.target_lane, a.target_speed, lim);
        c.target_lane = tgt.target_lane;
        PidMemory preview = a.pid;
        c.u_ref = pid_control(a.state, tgt, lane_center_y(tgt.target_lane),
                              cfg_.pid, cfg_.vehicle, cfg_.scenario.dt, preview);
        if (act.kind == ActionKind::EmergencyStop) c.u_ref.a = cfg_.vehicle.a_min;
        out.push_back(c);
    }
    return out;
}

void World::refresh_tick_cache() {
    const int n = cfg_.scenario.n_agents;
    candidates_.assign(n, {});
    reports_.assign(n, {});
    for (int i = 0; i < n; ++i) {
        if (agents_[i].status != AgentStatus::Active) continue;
        candidates_[i] = build_candidates(i);
        if (cfg_.toggles.shield) {
            VehicleState shield_ego = agents_[i].state;
            if (cfg_.channel.delay_ego_state && views_[i][i]) {
                const SharedPayload& p = *views_[i][i];
                shield_ego = VehicleState{p.x, p.y, p.psi, p.v};
            }
            reports_[i] = safe_action_set(
                candidates_[i], shield_ego, occupied_lanes(shield_ego.y),
                shield_neighbors(i), cfg_.barrier, cfg_.vehicle,
                cfg_.scenario.dt, 2.0 * cfg_.scenario.vehicle_radius);
        } else {
            SafeActionReport rep;
            rep.per_action.resize(candidates_[i].size());
            for (size_t k = 0; k < candidates_[i].size(); ++k) {
                QPResult& q = rep.per_action[k];
                q.feasible = candidates_[i][k].valid;
                q.u_star = candidates_[i][k].u_ref;
                if (q.feasible) rep.safe_set.push_back(static_cast<int>(k));
            }
            reports_[i] = std::move(rep);
        }
    }
}

const SafeActionReport& World::shield_report(int agent) const {
    return reports_[agent];
}

std::vector<int> World::selectable(int agent) const {
    return reports_[agent].safe_set;
}

double World::cast_ray(int agent, double angle) const {
    const VehicleState& ego = agents_[agent].state;
    const double cx = std::cos(angle), sy = std::sin(angle);
    double best = cfg_.scenario.ray_max;
    const double r = cfg_.scenario.vehicle_radius;

    auto test_disc = [&](double ox, double oy, double radius) {
        const double dx = wrap_dx(ox - ego.x);
        const double dy = oy - ego.y;
        const double proj = dx * cx + dy * sy;
        if (proj <= 0.0) return;
        const double perp2 = dx * dx + dy * dy - proj * proj;
        const double disc = radius * radius - perp2;
        if (disc < 0.0) return;
        const double t = proj - std::sqrt(disc);
        if (t > 0.0 && t < best) best = t;
    };

    for (int j = 0; j < cfg_.scenario.n_agents; ++j) {
        if (j == agent) continue;
        if (agents_[j].status == AgentStatus::Finished) continue;
        test_disc(agents_[j].state.x, agents_[j].state.y, r);
    }
    for (const auto& ob : cfg_.scenario.obstacles) {
        test_disc(ob.x, lane_center_y(ob.lane), r);
    }
    return best;
}

AgentView World::view(int agent) const {
    const Agent& a = agents_[agent];
    AgentView out;
    Observation& o = out.obs;
    o.x = a.state.x;
    o.y = a.state.y;
    o.lane = nearest_lane(a.state.y);
    o.v = a.state.v;
    o.alpha = a.last_a;
    const double c = lane_center_y(o.lane);
    const double half = 0.5 * cfg_.scenario.lane_width;
    o.d_left = (c + half) - a.state.y;
    o.d_right = a.state.y - (c - half);
    o.d_heading = a.state.psi;
    o.rays.resize(cfg_.scenario.n_rays);
    for (int k = 0; k < cfg_.scenario.n_rays; ++k) {
        const double ang = a.state.psi + 2.0 * M_PI * k / cfg_.scenario.n_rays;
        o.rays[k] = cast_ray(agent, ang);
    }
    if (cfg_.channel.obs_noise_sigma > 0.0) {
        // Domain-randomization noise on the ego's own kinematic and lane
        // features; rays stay clean (they are the collision ground truth).
        std::normal_distribution<double> g(0.0, cfg_.channel.obs_noise_sigma);
        auto& rng = const_cast<World*>(this)->env_rng_;
        o.x += g(rng);
        o.y += g(rng);
        o.v += g(rng);
        o.alpha += g(rng);
        o.d_left += g(rng);
        o.d_right += g(rng);
        o.d_heading += g(rng);
    }

    for (int j = 0; j < cfg_.scenario.n_agents; ++j) {
        if (j == agent) continue;
        NeighborSlot slot;
        if (agents_[j].status != AgentStatus::Finished && views_[agent][j]) {
            const SharedPayload& p = *views_[agent][j];
            slot.present = true;
            slot.dx = wrap_dx(p.x - a.state.x);
            slot.dy = p.y - a.state.y;
            slot.v = p.v;
            slot.psi = p.psi;
            slot.intended_action = p.intended_action;
        }
        out.neighbors.push_back(slot);
    }
    return out;
}

std::vector<double> World::obs_vec(int agent) const {
    std::vector<double> v(codec_.dim());
    codec_.encode(view(agent), v.data());
    return v;
}

std::vector<double> World::joint_obs_vec() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(codec_.dim()) * cfg_.scenario.n_agents);
    for (int i = 0; i < cfg_.scenario.n_agents; ++i) {
        auto v = obs_vec(i);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

bool World::episode_over() const {
    if (tick_ >= cfg_.scenario.episode_len) return true;
    for (const Agent& a : agents_) {
        if (a.status == AgentStatus::Active) return false;
    }
    return true;
}

StepOutcome World::step(const std::vector<int>& chosen_actions) {
    const ScenarioConfig& sc = cfg_.scenario;
    const int n = sc.n_agents;
    const int es_index = 0;
    StepOutcome out;
    out.tick = tick_;
    out.agents.resize(n);

    EnvLimits lim{sc.n_lanes, cfg_.vehicle.v_min, cfg_.vehicle.v_max, sc.dv};

    std::vector<VehicleState> prev(n);
    std::vector<bool> stepped(n, false);
    std::vector<ControlInput> controls(n);

    for (int i = 0; i < n; ++i) {
        Agent& a = agents_[i];
        prev[i] = a.state;
        if (a.status != AgentStatus::Active) continue;
        stepped[i] = true;

        int chosen = chosen_actions[i];
        int executed = chosen;
        if (chosen < 0 || chosen >= n_actions() || !candidates_[i][chosen].valid) {
            executed = es_index;
        } else if (cfg_.toggles.shield) {
            const auto& ss = reports_[i].safe_set;
            if (std::find(ss.begin(), ss.end(), chosen) == ss.end())
                executed = es_index;
        }

        const ActionCandidate& cand = candidates_[i][executed];
        const ActionTarget tgt = action_to_target(cand.action, cand.current_lane,
                                                  a.target_speed, lim);
        // Advance the controller memory with the executed target; the
        // preview in build_candidates used a copy of the same state, so
        // this reproduces cand.u_ref.
        ControlInput u_ref =
            pid_control(a.state, tgt, lane_center_y(tgt.target_lane), cfg_.pid,
                        cfg_.vehicle, sc.dt, a.pid);
        if (cand.action.kind == ActionKind::EmergencyStop) u_ref.a = cfg_.vehicle.a_min;

        ControlInput u = u_ref;
        bool intervened = false;
        if (cfg_.toggles.shield) {
            u = reports_[i].per_action[executed].u_star;
            intervened = reports_[i].per_action[executed].intervened ||
                         executed != chosen || reports_[i].safe_set.empty();
        }

        a.target_lane = tgt.target_lane;
        a.target_speed = tgt.target_speed;
        a.last_a = u.a;
        a.last_action = executed;
        controls[i] = u;

        AgentStepInfo& info = out.agents[i];
        info.chosen = chosen;
        info.executed = executed;
        info.intervened = intervened;
        ++stepped_ticks_;
        if (intervened) ++intervened_ticks_;
    }

    // All vehicles integrate simultaneously.
    for (int i = 0; i < n; ++i) {
        Agent& a = agents_[i];
        if (a.status != AgentStatus::Active) continue;
        VehicleState next = cavsim::step(a.state, controls[i], cfg_.vehicle, sc.dt);
        a.progress += next.x - a.state.x;
        if (sc.geometry == TrackGeometry::Loop) {
            next.x = std::fmod(next.x, sc.track_length);
            if (next.x < 0.0) next.x += sc.track_length;
        }
        a.state = next;
    }

    // Collision detection: disc overlap between vehicle footprints and
    // against obstacles. Only newly formed contacts are scored.
    const double rr = 2.0 * sc.vehicle_radius;
    std::vector<double> intensity_sum(n, 0.0);
    std::vector<bool> hit(n, false);
    int new_events = 0;

    auto velocity = [&](int i) {
        const VehicleState& s = agents_[i].state;
        return std::pair<double, double>{s.v * std::cos(s.psi),
                                         s.v * std::sin(s.psi)};
    };

    for (int i = 0; i < n; ++i) {
        if (agents_[i].status == AgentStatus::Finished) continue;
        for (int j = i + 1; j < n; ++j) {
            if (agents_[j].status == AgentStatus::Finished) continue;
            if (agents_[i].status == AgentStatus::Crashed &&
                agents_[j].status == AgentStatus::Crashed)
                continue;
            const double dx = wrap_dx(agents_[j].state.x - agents_[i].state.x);
            const double dy = agents_[j].state.y - agents_[i].state.y;
            const bool contact = dx * dx + dy * dy < rr * rr;
            const auto key = std::make_pair(i, j);
            if (contact && !contacts_.count(key)) {
                contacts_.insert(key);
                const auto [vix, viy] = velocity(i);
                const auto [vjx, vjy] = velocity(j);
                const double ivel = std::hypot(vix - vjx, viy - vjy);
                intensity_sum[i] += ivel;
                intensity_sum[j] += ivel;
                hit[i] = hit[j] = true;
                ++new_events;
            } else if (!contact) {
                contacts_.erase(key);
            }
        }
        for (size_t k = 0; k < sc.obstacles.size(); ++k) {
            const auto& ob = sc.obstacles[k];
            const double dx = wrap_dx(ob.x - agents_[i].state.x);
            const double dy = lane_center_y(ob.lane) - agents_[i].state.y;
            const bool contact = dx * dx + dy * dy < rr * rr;
            const auto key = std::make_pair(i, -1 - static_cast<int>(k));
            if (contact && !contacts_.count(key)) {
                contacts_.insert(key);
                intensity_sum[i] += agents_[i].state.v;
                hit[i] = true;
                ++new_events;
            } else if (!contact) {
                contacts_.erase(key);
            }
        }
    }
    collision_events_ += new_events;

    for (int i = 0; i < n; ++i) {
        if (hit[i] && agents_[i].status != AgentStatus::Finished) {
            agents_[i].status = AgentStatus::Crashed;
            agents_[i].state.v = 0.0;
        }
    }

    // Goal / lap completion.
    for (int i = 0; i < n; ++i) {
        Agent& a = agents_[i];
        if (a.status != AgentStatus::Active) continue;
        const bool done =
            sc.geometry == TrackGeometry::Straight
                ? a.state.x >= sc.goal_x[i]
                : a.progress >= sc.track_length;
        if (done) {
            a.status = AgentStatus::Finished;
            a.done_tick = tick_;
        }
    }

    // Rewards. Finished-before-this-tick agents are out of the pool;
    // crashed ones stay in it (halting is part of what a collision costs).
    std::vector<RewardInputs> rin(n);
    for (int i = 0; i < n; ++i) {
        Agent& a = agents_[i];
        RewardInputs& in = rin[i];
        const bool was_out = !stepped[i] && a.status == AgentStatus::Finished;
        in.counted = !was_out;
        in.speed = a.state.v;
        const double denom = sc.geometry == TrackGeometry::Straight
                                 ? (sc.goal_x[i] - sc.spawn_x[i])
                                 : sc.track_length;
        in.progress_frac = a.progress / denom;
        in.collision_intensity_sum = intensity_sum[i];
        in.collision_event = hit[i];
        if (stepped[i]) {
            in.executed_emergency_stop = out.agents[i].executed == es_index;
            in.chosen_matches_executed = out.agents[i].chosen == out.agents[i].executed;
        } else {
            in.executed_emergency_stop = false;
            in.chosen_matches_executed = false;
        }
        if (cfg_.reward.use_prox_penalty && in.counted) {
            double mn = sc.ray_max;
            for (int k = 0; k < sc.n_rays; ++k) {
                const double ang = a.state.psi + 2.0 * M_PI * k / sc.n_rays;
                mn = std::min(mn, cast_ray(i, ang));
            }
            in.min_ray = mn;
        }
    }
    const auto terms = reward_decomposed(rin, cfg_.reward);

    // Trace record for this tick.
    TraceTick rec;
    rec.tick = tick_;
    rec.new_collision_events = new_events;
    rec.agents.resize(n);
    for (int i = 0; i < n; ++i) {
        Agent& a = agents_[i];
        TraceAgentRecord& tr = rec.agents[i];
        tr.x = a.state.x;
        tr.y = a.state.y;
        tr.psi = a.state.psi;
        tr.v = a.state.v;
        tr.lane = nearest_lane(a.state.y);
        tr.stepped = stepped[i];
        tr.chosen = stepped[i] ? out.agents[i].chosen : a.last_action;
        tr.executed = stepped[i] ? out.agents[i].executed : a.last_action;
        tr.intervened = stepped[i] && out.agents[i].intervened;
        tr.collided = hit[i];
        tr.collision_intensity = intensity_sum[i];
        tr.reward = terms[i];
        tr.finished = a.status == AgentStatus::Finished;

        // Diagnostic: true barrier vs the closest leader over occupied lanes.
        tr.h_lead = 1e9;
        if (a.status != AgentStatus::Finished) {
            auto nb = shield_neighbors(i);
            // replace delayed views with ground truth for the diagnostic
            nb.clear();
            for (int j = 0; j < n; ++j) {
                if (j == i || agents_[j].status == AgentStatus::Finished) continue;
                LaneNeighbor ln;
                ln.state = agents_[j].state;
                ln.state.x = a.state.x + wrap_dx(agents_[j].state.x - a.state.x);
                ln.lanes = occupied_lanes(agents_[j].state.y);
                nb.push_back(ln);
            }
            for (const auto& ob : sc.obstacles) {
                LaneNeighbor ln;
                ln.state = VehicleState{a.state.x + wrap_dx(ob.x - a.state.x),
                                        lane_center_y(ob.lane), 0.0, 0.0};
                ln.lanes = occupied_lanes(lane_center_y(ob.lane));
                nb.push_back(ln);
            }
            for (int lane : occupied_lanes(a.state.y)) {
                const int lead = preceding_in_lane(a.state, lane, nb);
                if (lead >= 0) {
                    VehicleState tar = nb[lead].state;
                    tar.x -= 2.0 * sc.vehicle_radius;
                    tr.h_lead = std::min(tr.h_lead,
                                         barrier_value(a.state, tar, cfg_.barrier));
                }
            }
        }

        AgentStepInfo& info = out.agents[i];
        info.reward = terms[i];
        info.collided = hit[i];
        info.collision_intensity = intensity_sum[i];
        info.done = a.status != AgentStatus::Active;
        info.h_lead = tr.h_lead;
    }
    trace_.push_back(std::move(rec));

    ++tick_;
    if (!episode_over()) {
        std::vector<SharedPayload> payloads;
        std::vector<bool> active;
        for (const Agent& a : agents_) {
            payloads.push_back(payload_of(a, a.last_action));
            active.push_back(a.status != AgentStatus::Finished);
        }
        views_ = bus_->round(tick_, payloads, active);
        refresh_tick_cache();
    }

    out.all_done = episode_over();
    return out;
}

Metrics World::metrics() const {
    return episode_metrics(trace_, cfg_.discount_gamma, cfg_.scenario.dt,
                           cfg_.scenario.episode_len, cfg_.toggles.shield);
}

}  // namespace cavsim
