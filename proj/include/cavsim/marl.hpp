#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "cavsim/env.hpp"
#include "cavsim/mlp.hpp"

// Robust multi-agent PPO under centralized training / decentralized
// execution: per-agent policy, centralized PPO critic, worst-case-Q
// critic over sampled observation perturbations, and the lambda-weighted
// robustness term in the policy loss.

namespace cavsim {

struct TrainConfig {
    double lr_actor = 1e-4;
    double lr_critic = 2e-4;  // also used for the worst-Q net
    double discount_gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    int epochs = 5;  // gradient epochs per episode update
    double eps_start = 0.5;
    double eps_end = 0.05;
    double rho = 0.05;   // l-inf perturbation radius, normalized obs units
    int n_perturb = 8;   // sampled perturbations for the worst-case min
    double lambda_max = 0.5;
    double lambda_step = 0.005;  // additive per update; ramps over half of training
    double entropy_coef = 0.01;
    int n_episodes = 200;
    int n_agents = 3;
    int hidden = 64;
    bool lambda_frozen = false;
    // The centralized critic reads the fresh joint observation by
    // default (training-time privilege). The delayed variant feeds it
    // the agent's own local view, whose neighbor blocks carry only what
    // the bus delivered.
    bool critic_uses_delayed = false;
};

// Parameters and optimizer state of one agent.
struct AgentNets {
    MlpNet policy;    // obs -> action logits
    MlpNet critic;    // joint obs -> V
    MlpNet worst_q;   // [obs | one-hot action] -> Q lower estimate
    Adam opt_policy, opt_critic, opt_worst_q;
    double lambda = 0.0;
};

struct TrainerState {
    std::vector<AgentNets> agents;
    int epoch = 0;  // completed updates
};

TrainerState make_trainer(int obs_dim, int joint_dim, int num_actions,
                          const TrainConfig& cfg, std::mt19937_64& rng);

// Per-agent episode storage. All sequences share the same length; a
// trajectory ends early when the agent finishes or crashes (done = 1 on
// its last entry).
struct RolloutMemory {
    int obs_dim = 0;
    int joint_dim = 0;
    int num_actions = 0;
    std::vector<double> obs;        // T x obs_dim
    std::vector<double> joint_obs;  // T x joint_dim
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<double> logprobs;
    std::vector<std::uint8_t> dones;
    std::vector<std::uint8_t> masks;  // T x num_actions selectable set
    std::vector<double> final_obs;    // post-episode obs when not done
    double final_value = 0.0;         // bootstrap value when not done

    int size() const { return static_cast<int>(actions.size()); }
    std::span<const double> obs_at(int t) const {
        return {obs.data() + static_cast<size_t>(t) * obs_dim,
                static_cast<size_t>(obs_dim)};
    }
    std::span<const double> joint_at(int t) const {
        return {joint_obs.data() + static_cast<size_t>(t) * joint_dim,
                static_cast<size_t>(joint_dim)};
    }
    std::span<const std::uint8_t> mask_at(int t) const {
        return {masks.data() + static_cast<size_t>(t) * num_actions,
                static_cast<size_t>(num_actions)};
    }
};

struct SelectResult {
    int action = 0;
    double logprob = 0.0;
};

// Epsilon-greedy over the safe set, otherwise a sample from the policy
// softmax renormalized over it. Empty safe set falls back to the
// emergency stop deterministically. Reads only this agent's observation
// and parameters (decentralized execution).
SelectResult select_action(const MlpNet& policy, std::span<const double> obs,
                           const std::vector<int>& safe_set, int num_actions,
                           double eps, std::mt19937_64& rng,
                           bool greedy = false, int emergency_index = 0);

struct TrainAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One full update from episode memories: GAE advantages from the
// centralized critic, clipped-surrogate policy loss minus
// lambda * (expected worst-case Q under the policy), critic regression to
// returns, worst-Q regression to the perturbation-minimum bootstrapped
// target, then the additive lambda ramp. Throws TrainAbort on non-finite
// losses and std::invalid_argument on empty memory.
void ppo_update(const std::vector<RolloutMemory>& memories, TrainerState& ts,
                const TrainConfig& cfg, std::mt19937_64& perturb_rng);

struct EpisodeCurve {
    int episode = 0;
    double efficiency_return = 0.0;
    int collisions = 0;
    double mean_lambda = 0.0;
    double mean_flow = 0.0;  // mean per-tick flow reward component
    double epsilon = 0.0;
};

struct TrainResult {
    TrainerState state;
    std::vector<EpisodeCurve> curves;
};

// Full training loop of the rollout/update algorithm: per episode, roll
// out with comm delay and shield per the sim config, then update. Fully
// seeded and deterministic.
TrainResult train(const SimConfig& sim, const TrainConfig& cfg,
                  std::uint64_t seed,
                  const std::function<void(const EpisodeCurve&)>& on_episode = {});

double epsilon_at(const TrainConfig& cfg, int episode);

}  // namespace cavsim
