#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavsim/comm.hpp"
#include "cavsim/env.hpp"
#include "cavsim/marl.hpp"

// Config files, checkpoints and the CSV/JSONL outputs. Every artifact
// embeds the resolved-config hash and the seed so runs can be audited.

namespace cavsim::io {

std::string fnv1a64_hex(const std::string& s);
std::string format_double(double v);  // stable %.12g

struct RunBundle {
    SimConfig sim;
    TrainConfig train;
};

nlohmann::json to_json(const RunBundle& b);
RunBundle parse_config(const nlohmann::json& j);
RunBundle load_config_file(const std::string& path);  // throws on any error

// Hash of the resolved config modulo the method-preset toggles, so one
// checkpoint remains evaluable across the ablation grid. The method name
// itself travels in the config snapshot and every metrics row.
std::string config_hash(const RunBundle& b);

struct Checkpoint {
    int version = 1;
    std::string config_hash;
    std::uint64_t seed = 0;
    int obs_dim = 0;
    int joint_dim = 0;
    int num_actions = 0;
    TrainerState state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

void write_curves_csv(const std::string& path,
                      const std::vector<EpisodeCurve>& curves,
                      const std::string& cfg_hash, std::uint64_t seed);

struct MetricsRow {
    std::string scenario;
    std::string method;
    int episodes = 0;
    int collisions = 0;        // total over episodes
    double mean_time_s = 0.0;
    double mean_efficiency_return = 0.0;
    double mean_intervention_rate = 0.0;
};

void write_metrics_csv(const std::string& path, const MetricsRow& row,
                       const std::string& cfg_hash, std::uint64_t seed);

void write_trace_jsonl(const std::string& path,
                       const std::vector<TraceTick>& trace,
                       const nlohmann::json& header);

void write_channel_trace_jsonl(const std::string& path,
                               const std::vector<ChannelEvent>& events);

}  // namespace cavsim::io
