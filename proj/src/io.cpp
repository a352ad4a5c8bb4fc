#include "cavsim/io.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cavsim::io {

using nlohmann::json;

std::string fnv1a64_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

namespace {

std::string geometry_name(TrackGeometry g) {
    return g == TrackGeometry::Loop ? "loop" : "straight";
}
TrackGeometry geometry_from(const std::string& s) {
    if (s == "loop") return TrackGeometry::Loop;
    if (s == "straight") return TrackGeometry::Straight;
    throw std::invalid_argument("config: unknown geometry '" + s + "'");
}
std::string form_name(BarrierForm f) {
    return f == BarrierForm::LinearHeadway ? "linear" : "quadratic";
}
BarrierForm form_from(const std::string& s) {
    if (s == "linear") return BarrierForm::LinearHeadway;
    if (s == "quadratic") return BarrierForm::QuadraticHeadway;
    throw std::invalid_argument("config: unknown barrier form '" + s + "'");
}

}  // namespace

json to_json(const RunBundle& b) {
    const SimConfig& s = b.sim;
    json j;
    j["schema_version"] = 1;
    j["scenario"] = {
        {"name", s.scenario.name},
        {"n_lanes", s.scenario.n_lanes},
        {"lane_width", s.scenario.lane_width},
        {"track_length", s.scenario.track_length},
        {"geometry", geometry_name(s.scenario.geometry)},
        {"n_agents", s.scenario.n_agents},
        {"spawn_lane", s.scenario.spawn_lane},
        {"spawn_x", s.scenario.spawn_x},
        {"goal_x", s.scenario.goal_x},
        {"initial_speed", s.scenario.initial_speed},
        {"initial_target_speed", s.scenario.initial_target_speed},
        {"episode_len", s.scenario.episode_len},
        {"dt", s.scenario.dt},
        {"vehicle_radius", s.scenario.vehicle_radius},
        {"n_rays", s.scenario.n_rays},
        {"ray_max", s.scenario.ray_max},
        {"k_levels", s.scenario.k_levels},
        {"dv", s.scenario.dv},
    };
    json obs = json::array();
    for (const auto& ob : s.scenario.obstacles)
        obs.push_back({{"lane", ob.lane}, {"x", ob.x}});
    j["scenario"]["obstacles"] = obs;
    j["vehicle"] = {
        {"wheelbase_L", s.vehicle.wheelbase_L}, {"v_min", s.vehicle.v_min},
        {"v_max", s.vehicle.v_max},             {"a_min", s.vehicle.a_min},
        {"a_max", s.vehicle.a_max},             {"delta_max", s.vehicle.delta_max},
    };
    j["barrier"] = {
        {"form", form_name(s.barrier.form)}, {"c1", s.barrier.c1},
        {"c2", s.barrier.c2},                {"c", s.barrier.c},
        {"delta_gap", s.barrier.delta_gap},  {"cbf_gamma", s.barrier.cbf_gamma},
    };
    j["pid"] = {
        {"kp", s.pid.kp},     {"ki", s.pid.ki},
        {"kd", s.pid.kd},     {"v_floor", s.pid.v_floor},
        {"kp_v", s.pid.kp_v}, {"integral_clamp", s.pid.integral_clamp},
    };
    j["reward"] = {
        {"w1", s.reward.w1},
        {"w2", s.reward.w2},
        {"w3", s.reward.w3},
        {"alpha_mix", s.reward.alpha_mix},
        {"flow_coef", s.reward.flow_coef},
        {"interpolate", s.reward.interpolate},
        {"v_ref", s.reward.v_ref},
        {"safe_match_bonus", s.reward.safe_match_bonus},
        {"safe_stop_penalty", s.reward.safe_stop_penalty},
        {"collision_scale", s.reward.collision_scale},
        {"use_prox_penalty", s.reward.use_prox_penalty},
        {"prox_threshold", s.reward.prox_threshold},
        {"prox_penalty", s.reward.prox_penalty},
    };
    j["channel"] = {
        {"t_delay", s.channel.t_delay},
        {"dropout_p", s.channel.dropout_p},
        {"obs_noise_sigma", s.channel.obs_noise_sigma},
        {"seed", s.channel.seed},
        {"delay_ego_state", s.channel.delay_ego_state},
        {"enabled", s.channel.enabled},
    };
    j["toggles"] = {
        {"shield", s.toggles.shield},
        {"lambda_frozen", s.toggles.lambda_frozen},
    };
    j["discount_gamma"] = s.discount_gamma;
    const TrainConfig& t = b.train;
    j["train"] = {
        {"lr_actor", t.lr_actor},
        {"lr_critic", t.lr_critic},
        {"discount_gamma", t.discount_gamma},
        {"gae_lambda", t.gae_lambda},
        {"clip_eps", t.clip_eps},
        {"epochs", t.epochs},
        {"eps_start", t.eps_start},
        {"eps_end", t.eps_end},
        {"rho", t.rho},
        {"n_perturb", t.n_perturb},
        {"lambda_max", t.lambda_max},
        {"lambda_step", t.lambda_step},
        {"entropy_coef", t.entropy_coef},
        {"n_episodes", t.n_episodes},
        {"hidden", t.hidden},
        {"critic_uses_delayed", t.critic_uses_delayed},
    };
    return j;
}

RunBundle parse_config(const json& j) {
    RunBundle b;
    SimConfig& s = b.sim;
    if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
        throw std::invalid_argument("config: unsupported schema_version");
    if (j.contains("scenario")) {
        const json& c = j["scenario"];
        s.scenario.name = c.value("name", s.scenario.name);
        s.scenario.n_lanes = c.value("n_lanes", s.scenario.n_lanes);
        s.scenario.lane_width = c.value("lane_width", s.scenario.lane_width);
        s.scenario.track_length = c.value("track_length", s.scenario.track_length);
        if (c.contains("geometry"))
            s.scenario.geometry = geometry_from(c["geometry"].get<std::string>());
        s.scenario.n_agents = c.value("n_agents", s.scenario.n_agents);
        if (c.contains("obstacles")) {
            for (const auto& o : c["obstacles"]) {
                s.scenario.obstacles.push_back(
                    {o.at("lane").get<int>(), o.at("x").get<double>()});
            }
        }
        s.scenario.spawn_lane =
            c.value("spawn_lane", std::vector<int>{});
        s.scenario.spawn_x = c.value("spawn_x", std::vector<double>{});
        s.scenario.goal_x = c.value("goal_x", std::vector<double>{});
        s.scenario.initial_speed = c.value("initial_speed", s.scenario.initial_speed);
        s.scenario.initial_target_speed =
            c.value("initial_target_speed", s.scenario.initial_target_speed);
        s.scenario.episode_len = c.value("episode_len", s.scenario.episode_len);
        s.scenario.dt = c.value("dt", s.scenario.dt);
        s.scenario.vehicle_radius =
            c.value("vehicle_radius", s.scenario.vehicle_radius);
        s.scenario.n_rays = c.value("n_rays", s.scenario.n_rays);
        s.scenario.ray_max = c.value("ray_max", s.scenario.ray_max);
        s.scenario.k_levels = c.value("k_levels", s.scenario.k_levels);
        s.scenario.dv = c.value("dv", s.scenario.dv);
    }
    if (j.contains("vehicle")) {
        const json& c = j["vehicle"];
        s.vehicle.wheelbase_L = c.value("wheelbase_L", s.vehicle.wheelbase_L);
        s.vehicle.v_min = c.value("v_min", s.vehicle.v_min);
        s.vehicle.v_max = c.value("v_max", s.vehicle.v_max);
        s.vehicle.a_min = c.value("a_min", s.vehicle.a_min);
        s.vehicle.a_max = c.value("a_max", s.vehicle.a_max);
        s.vehicle.delta_max = c.value("delta_max", s.vehicle.delta_max);
    }
    if (j.contains("barrier")) {
        const json& c = j["barrier"];
        if (c.contains("form")) s.barrier.form = form_from(c["form"].get<std::string>());
        s.barrier.c1 = c.value("c1", s.barrier.c1);
        s.barrier.c2 = c.value("c2", s.barrier.c2);
        s.barrier.c = c.value("c", s.barrier.c);
        s.barrier.delta_gap = c.value("delta_gap", s.barrier.delta_gap);
        s.barrier.cbf_gamma = c.value("cbf_gamma", s.barrier.cbf_gamma);
    }
    if (j.contains("pid")) {
        const json& c = j["pid"];
        s.pid.kp = c.value("kp", s.pid.kp);
        s.pid.ki = c.value("ki", s.pid.ki);
        s.pid.kd = c.value("kd", s.pid.kd);
        s.pid.v_floor = c.value("v_floor", s.pid.v_floor);
        s.pid.kp_v = c.value("kp_v", s.pid.kp_v);
        s.pid.integral_clamp = c.value("integral_clamp", s.pid.integral_clamp);
    }
    if (j.contains("reward")) {
        const json& c = j["reward"];
        s.reward.w1 = c.value("w1", s.reward.w1);
        s.reward.w2 = c.value("w2", s.reward.w2);
        s.reward.w3 = c.value("w3", s.reward.w3);
        s.reward.alpha_mix = c.value("alpha_mix", s.reward.alpha_mix);
        s.reward.flow_coef = c.value("flow_coef", s.reward.flow_coef);
        s.reward.interpolate = c.value("interpolate", s.reward.interpolate);
        s.reward.v_ref = c.value("v_ref", s.reward.v_ref);
        s.reward.safe_match_bonus =
            c.value("safe_match_bonus", s.reward.safe_match_bonus);
        s.reward.safe_stop_penalty =
            c.value("safe_stop_penalty", s.reward.safe_stop_penalty);
        s.reward.collision_scale =
            c.value("collision_scale", s.reward.collision_scale);
        s.reward.use_prox_penalty =
            c.value("use_prox_penalty", s.reward.use_prox_penalty);
        s.reward.prox_threshold = c.value("prox_threshold", s.reward.prox_threshold);
        s.reward.prox_penalty = c.value("prox_penalty", s.reward.prox_penalty);
    }
    if (j.contains("channel")) {
        const json& c = j["channel"];
        s.channel.t_delay = c.value("t_delay", s.channel.t_delay);
        s.channel.dropout_p = c.value("dropout_p", s.channel.dropout_p);
        s.channel.obs_noise_sigma =
            c.value("obs_noise_sigma", s.channel.obs_noise_sigma);
        s.channel.seed = c.value("seed", s.channel.seed);
        s.channel.delay_ego_state =
            c.value("delay_ego_state", s.channel.delay_ego_state);
        s.channel.enabled = c.value("enabled", s.channel.enabled);
    }
    if (j.contains("toggles")) {
        const json& c = j["toggles"];
        s.toggles.shield = c.value("shield", s.toggles.shield);
        s.toggles.lambda_frozen = c.value("lambda_frozen", s.toggles.lambda_frozen);
    }
    TrainConfig& t = b.train;
    if (j.contains("train")) {
        const json& c = j["train"];
        t.lr_actor = c.value("lr_actor", t.lr_actor);
        t.lr_critic = c.value("lr_critic", t.lr_critic);
        t.discount_gamma = c.value("discount_gamma", t.discount_gamma);
        t.gae_lambda = c.value("gae_lambda", t.gae_lambda);
        t.clip_eps = c.value("clip_eps", t.clip_eps);
        t.epochs = c.value("epochs", t.epochs);
        t.eps_start = c.value("eps_start", t.eps_start);
        t.eps_end = c.value("eps_end", t.eps_end);
        t.rho = c.value("rho", t.rho);
        t.n_perturb = c.value("n_perturb", t.n_perturb);
        t.lambda_max = c.value("lambda_max", t.lambda_max);
        t.lambda_step = c.value("lambda_step", t.lambda_step);
        t.entropy_coef = c.value("entropy_coef", t.entropy_coef);
        t.n_episodes = c.value("n_episodes", t.n_episodes);
        t.hidden = c.value("hidden", t.hidden);
        t.critic_uses_delayed =
            c.value("critic_uses_delayed", t.critic_uses_delayed);
    }
    t.n_agents = s.scenario.n_agents;
    s.discount_gamma = t.discount_gamma;
    t.lambda_frozen = s.toggles.lambda_frozen;
    return b;
}

RunBundle load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    json j = json::parse(f);  // throws on malformed JSON
    return parse_config(j);
}

std::string config_hash(const RunBundle& b) {
    // Hash the method-invariant part: the ablation grid evaluates one
    // checkpoint under different method presets, so the preset-controlled
    // toggles are normalized out before hashing.
    RunBundle canon = b;
    canon.sim.toggles.shield = true;
    canon.sim.toggles.lambda_frozen = false;
    canon.sim.channel.enabled = true;
    canon.sim.channel.obs_noise_sigma = 0.0;
    canon.train.lambda_frozen = false;
    return fnv1a64_hex(to_json(canon).dump());
}

namespace {

json net_to_json(const MlpNet& n) {
    return {{"sizes", n.sizes()}, {"params", n.params()}};
}

MlpNet net_from_json(const json& j) {
    MlpNet n = MlpNet::zeros(j.at("sizes").get<std::vector<int>>());
    auto p = j.at("params").get<std::vector<double>>();
    if (static_cast<int>(p.size()) != n.n_params())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    n.params() = std::move(p);
    return n;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    json j;
    j["version"] = ck.version;
    j["config_hash"] = ck.config_hash;
    j["seed"] = ck.seed;
    j["obs_dim"] = ck.obs_dim;
    j["joint_dim"] = ck.joint_dim;
    j["num_actions"] = ck.num_actions;
    j["epoch"] = ck.state.epoch;
    json agents = json::array();
    for (const auto& a : ck.state.agents) {
        agents.push_back({{"policy", net_to_json(a.policy)},
                          {"critic", net_to_json(a.critic)},
                          {"worst_q", net_to_json(a.worst_q)},
                          {"lambda", a.lambda}});
    }
    j["agents"] = agents;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    json j = json::parse(f);
    Checkpoint ck;
    ck.version = j.at("version").get<int>();
    if (ck.version != 1) throw std::runtime_error("checkpoint: unknown version");
    ck.config_hash = j.at("config_hash").get<std::string>();
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.obs_dim = j.at("obs_dim").get<int>();
    ck.joint_dim = j.at("joint_dim").get<int>();
    ck.num_actions = j.at("num_actions").get<int>();
    ck.state.epoch = j.at("epoch").get<int>();
    for (const auto& a : j.at("agents")) {
        AgentNets n;
        n.policy = net_from_json(a.at("policy"));
        n.critic = net_from_json(a.at("critic"));
        n.worst_q = net_from_json(a.at("worst_q"));
        n.lambda = a.at("lambda").get<double>();
        ck.state.agents.push_back(std::move(n));
    }
    return ck;
}

void write_curves_csv(const std::string& path,
                      const std::vector<EpisodeCurve>& curves,
                      const std::string& cfg_hash, std::uint64_t seed) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write csv: " + path);
    f << "episode,efficiency_return,collisions,mean_lambda,mean_flow,epsilon,"
         "config_hash,seed\n";
    for (const auto& c : curves) {
        f << c.episode << ',' << format_double(c.efficiency_return) << ','
          << c.collisions << ',' << format_double(c.mean_lambda) << ','
          << format_double(c.mean_flow) << ',' << format_double(c.epsilon)
          << ',' << cfg_hash << ',' << seed << "\n";
    }
}

void write_metrics_csv(const std::string& path, const MetricsRow& row,
                       const std::string& cfg_hash, std::uint64_t seed) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write csv: " + path);
    f << "scenario,method,episodes,collisions,mean_time_s,"
         "mean_efficiency_return,mean_intervention_rate,config_hash,seed\n";
    f << row.scenario << ',' << row.method << ',' << row.episodes << ','
      << row.collisions << ',' << format_double(row.mean_time_s) << ','
      << format_double(row.mean_efficiency_return) << ','
      << format_double(row.mean_intervention_rate) << ',' << cfg_hash << ','
      << seed << "\n";
}

void write_trace_jsonl(const std::string& path,
                       const std::vector<TraceTick>& trace,
                       const json& header) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write trace: " + path);
    f << header.dump() << "\n";
    for (const auto& tk : trace) {
        json j;
        j["tick"] = tk.tick;
        j["events"] = tk.new_collision_events;
        json agents = json::array();
        for (const auto& a : tk.agents) {
            json ja = {{"x", a.x},
                       {"y", a.y},
                       {"psi", a.psi},
                       {"v", a.v},
                       {"lane", a.lane},
                       {"chosen", a.chosen},
                       {"executed", a.executed},
                       {"intervened", a.intervened},
                       {"collided", a.collided},
                       {"intensity", a.collision_intensity},
                       {"stepped", a.stepped},
                       {"finished", a.finished},
                       {"r", {{"flow", a.reward.flow},
                              {"dest", a.reward.dest},
                              {"coll", a.reward.coll},
                              {"safe", a.reward.safe},
                              {"task", a.reward.task},
                              {"total", a.reward.total}}}};
            if (a.h_lead < 1e8) ja["h_lead"] = a.h_lead;
            agents.push_back(std::move(ja));
        }
        j["agents"] = std::move(agents);
        f << j.dump() << "\n";
    }
}

void write_channel_trace_jsonl(const std::string& path,
                               const std::vector<ChannelEvent>& events) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write channel trace: " + path);
    for (const auto& e : events) {
        json j = {{"tick", e.tick},
                  {"sender", e.sender},
                  {"dropped", e.dropped},
                  {"delivered_tick", e.delivered_tick}};
        f << j.dump() << "\n";
    }
}

}  // namespace cavsim::io
