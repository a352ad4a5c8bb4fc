#include "cavsim/marl.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace cavsim {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

TrainerState make_trainer(int obs_dim, int joint_dim, int num_actions,
                          const TrainConfig& cfg, std::mt19937_64& rng) {
    TrainerState ts;
    for (int i = 0; i < cfg.n_agents; ++i) {
        AgentNets a;
        a.policy = MlpNet::make({obs_dim, cfg.hidden, cfg.hidden, num_actions}, rng);
        a.critic = MlpNet::make({joint_dim, cfg.hidden, cfg.hidden, 1}, rng);
        a.worst_q =
            MlpNet::make({obs_dim + num_actions, cfg.hidden, cfg.hidden, 1}, rng);
        a.opt_policy = Adam(a.policy.n_params(), cfg.lr_actor);
        a.opt_critic = Adam(a.critic.n_params(), cfg.lr_critic);
        a.opt_worst_q = Adam(a.worst_q.n_params(), cfg.lr_critic);
        a.lambda = 0.0;
        ts.agents.push_back(std::move(a));
    }
    return ts;
}

double epsilon_at(const TrainConfig& cfg, int episode) {
    if (cfg.n_episodes <= 1) return cfg.eps_end;
    const double f = static_cast<double>(episode) / (cfg.n_episodes - 1);
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * std::min(1.0, f);
}

SelectResult select_action(const MlpNet& policy, std::span<const double> obs,
                           const std::vector<int>& safe_set, int num_actions,
                           double eps, std::mt19937_64& rng, bool greedy,
                           int emergency_index) {
    if (safe_set.empty()) return {emergency_index, 0.0};

    std::vector<std::uint8_t> mask(num_actions, 0);
    for (int a : safe_set) mask[a] = 1;
    const std::vector<double> logits = policy.forward(obs);
    const std::vector<double> p = masked_softmax(logits, mask);

    int action;
    if (greedy) {
        action = safe_set.front();
        for (int a : safe_set) {
            if (p[a] > p[action]) action = a;
        }
    } else {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        if (u01(rng) < eps) {
            std::uniform_int_distribution<size_t> pick(0, safe_set.size() - 1);
            action = safe_set[pick(rng)];
        } else {
            const double u = u01(rng);
            double acc = 0.0;
            action = safe_set.back();
            for (int a : safe_set) {
                acc += p[a];
                if (u <= acc) {
                    action = a;
                    break;
                }
            }
        }
    }
    const double logp = std::log(std::max(p[action], 1e-300));
    return {action, logp};
}

namespace {

struct Gae {
    std::vector<double> adv;
    std::vector<double> ret;
};

Gae compute_gae(const RolloutMemory& m, const TrainConfig& cfg) {
    const int T = m.size();
    Gae g;
    g.adv.assign(T, 0.0);
    g.ret.assign(T, 0.0);
    double gae = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        const double nonterm = m.dones[t] ? 0.0 : 1.0;
        const double next_v =
            (t == T - 1) ? m.final_value : m.values[t + 1];
        const double delta =
            m.rewards[t] + cfg.discount_gamma * next_v * nonterm - m.values[t];
        gae = delta + cfg.discount_gamma * cfg.gae_lambda * nonterm * gae;
        g.adv[t] = gae;
        g.ret[t] = gae + m.values[t];
    }
    return g;
}

void normalize(std::vector<double>& a) {
    if (a.empty()) return;
    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    var /= static_cast<double>(a.size());
    const double sd = std::sqrt(var) + 1e-8;
    for (double& x : a) x = (x - mean) / sd;
}

double worst_q_eval(const MlpNet& net, std::span<const double> obs,
                    const std::vector<double>& delta, int action,
                    int num_actions, std::vector<double>& scratch) {
    const int d = static_cast<int>(obs.size());
    scratch.assign(d + num_actions, 0.0);
    for (int i = 0; i < d; ++i)
        scratch[i] = obs[i] + (delta.empty() ? 0.0 : delta[i]);
    scratch[d + action] = 1.0;
    double out;
    net.forward(scratch, {&out, 1});
    return out;
}

void check_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw TrainAbort(std::string("non-finite loss in ") + what);
    }
}

const std::vector<double> kNoDelta;

}  // namespace

void ppo_update(const std::vector<RolloutMemory>& memories, TrainerState& ts,
                const TrainConfig& cfg, std::mt19937_64& perturb_rng) {
    if (memories.size() != ts.agents.size())
        throw std::invalid_argument("ppo_update: one memory per agent required");
    for (const auto& m : memories) {
        if (m.size() == 0)
            throw std::invalid_argument("ppo_update: empty rollout memory");
    }

    std::uniform_real_distribution<double> upert(-cfg.rho, cfg.rho);

    for (size_t ai = 0; ai < ts.agents.size(); ++ai) {
        AgentNets& net = ts.agents[ai];
        const RolloutMemory& m = memories[ai];
        const int T = m.size();
        const int A = m.num_actions;

        Gae gae = compute_gae(m, cfg);
        std::vector<double> adv = gae.adv;
        normalize(adv);

        // Shared perturbation draws for this agent's update: one l-inf
        // sample set per time step, reused by the worst-Q target and the
        // policy robustness table. rho = 0 degenerates to no perturbation.
        std::vector<std::vector<double>> deltas(
            static_cast<size_t>(T) * cfg.n_perturb);
        if (cfg.rho > 0.0) {
            for (auto& d : deltas) {
                d.resize(m.obs_dim);
                for (double& x : d) x = upert(perturb_rng);
            }
        }
        auto delta_at = [&](int t, int k) -> const std::vector<double>& {
            return deltas[static_cast<size_t>(t) * cfg.n_perturb + k];
        };

        std::vector<double> scratch;

        // ---- Worst-Q regression targets (SARSA-style bootstrap with the
        // perturbation minimum on the next observation).
        std::vector<double> q_targets(T);
        for (int t = 0; t < T; ++t) {
            double boot = 0.0;
            if (!m.dones[t]) {
                std::span<const double> next_obs =
                    (t == T - 1) ? std::span<const double>(m.final_obs)
                                 : m.obs_at(t + 1);
                int next_a;
                if (t == T - 1) {
                    // capped episode: greedy action under the current policy
                    const auto logits = net.policy.forward(next_obs);
                    next_a = static_cast<int>(std::distance(
                        logits.begin(),
                        std::max_element(logits.begin(), logits.end())));
                } else {
                    next_a = m.actions[t + 1];
                }
                double mn = 0.0;
                for (int k = 0; k < std::max(1, cfg.n_perturb); ++k) {
                    const std::vector<double>& d =
                        (cfg.rho > 0.0) ? delta_at(std::min(t + 1, T - 1), k)
                                        : kNoDelta;
                    const double q = worst_q_eval(net.worst_q, next_obs, d,
                                                  next_a, A, scratch);
                    mn = (k == 0) ? q : std::min(mn, q);
                    if (cfg.rho <= 0.0) break;
                }
                boot = mn;
            }
            q_targets[t] = m.rewards[t] + cfg.discount_gamma * boot;
        }

        // ---- Worst-Q regression epochs.
        {
            std::vector<double> grad(net.worst_q.n_params());
            MlpNet::Workspace ws;
            std::vector<double> input(m.obs_dim + A);
            for (int e = 0; e < cfg.epochs; ++e) {
                std::fill(grad.begin(), grad.end(), 0.0);
                double loss = 0.0;
                for (int t = 0; t < T; ++t) {
                    auto o = m.obs_at(t);
                    std::fill(input.begin(), input.end(), 0.0);
                    std::copy(o.begin(), o.end(), input.begin());
                    input[m.obs_dim + m.actions[t]] = 1.0;
                    double q;
                    net.worst_q.forward(input, {&q, 1}, &ws);
                    const double err = q - q_targets[t];
                    loss += err * err / T;
                    const double dq = 2.0 * err / T;
                    net.worst_q.backward(ws, {&dq, 1}, grad);
                }
                check_finite(loss, "worst-Q regression");
                net.opt_worst_q.step(net.worst_q.params(), grad);
            }
        }

        // ---- Critic regression to discounted returns.
        {
            std::vector<double> grad(net.critic.n_params());
            MlpNet::Workspace ws;
            for (int e = 0; e < cfg.epochs; ++e) {
                std::fill(grad.begin(), grad.end(), 0.0);
                double loss = 0.0;
                for (int t = 0; t < T; ++t) {
                    double v;
                    net.critic.forward(m.joint_at(t), {&v, 1}, &ws);
                    const double err = v - gae.ret[t];
                    loss += err * err / T;
                    const double dv = 2.0 * err / T;
                    net.critic.backward(ws, {&dv, 1}, grad);
                }
                check_finite(loss, "critic regression");
                net.opt_critic.step(net.critic.params(), grad);
            }
        }

        // ---- Policy robustness table with the freshly updated worst-Q:
        // Qw[t][a] = min over sampled perturbations of Q(obs_t + delta, a).
        // Constant across the policy epochs (it has no theta dependence).
        std::vector<double> qw(static_cast<size_t>(T) * A, 0.0);
        const bool use_robust = !cfg.lambda_frozen || net.lambda > 0.0;
        if (use_robust) {
            for (int t = 0; t < T; ++t) {
                auto o = m.obs_at(t);
                for (int a = 0; a < A; ++a) {
                    double mn = 0.0;
                    for (int k = 0; k < std::max(1, cfg.n_perturb); ++k) {
                        const std::vector<double>& d =
                            (cfg.rho > 0.0) ? delta_at(t, k) : kNoDelta;
                        const double q =
                            worst_q_eval(net.worst_q, o, d, a, A, scratch);
                        mn = (k == 0) ? q : std::min(mn, q);
                        if (cfg.rho <= 0.0) break;
                    }
                    qw[static_cast<size_t>(t) * A + a] = mn;
                }
            }
        }

        // ---- Policy epochs: clipped surrogate + entropy bonus +
        // lambda-weighted expected worst-case Q.
        {
            std::vector<double> grad(net.policy.n_params());
            std::vector<double> dlogits(A);
            std::vector<double> logits(A);
            MlpNet::Workspace ws;
            for (int e = 0; e < cfg.epochs; ++e) {
                std::fill(grad.begin(), grad.end(), 0.0);
                double loss = 0.0;
                for (int t = 0; t < T; ++t) {
                    net.policy.forward(m.obs_at(t), logits, &ws);
                    const std::vector<std::uint8_t> mask(
                        m.mask_at(t).begin(), m.mask_at(t).end());
                    const std::vector<double> p = masked_softmax(logits, mask);
                    const int a = m.actions[t];
                    if (p[a] <= 0.0) continue;  // fallback action outside mask
                    const double logp = std::log(p[a]);
                    const double ratio = std::exp(logp - m.logprobs[t]);
                    const bool clipped_out =
                        (adv[t] >= 0.0 && ratio > 1.0 + cfg.clip_eps) ||
                        (adv[t] < 0.0 && ratio < 1.0 - cfg.clip_eps);
                    const double surr =
                        std::min(ratio * adv[t],
                                 clamp(ratio, 1.0 - cfg.clip_eps,
                                       1.0 + cfg.clip_eps) *
                                     adv[t]);
                    loss += -surr / T;
                    // dL/dlogits via d logp(a)/dlogits = e_a - p (masked)
                    const double gsurr = clipped_out ? 0.0 : ratio * adv[t];

                    double entropy = 0.0;
                    double rterm = 0.0;
                    for (int j = 0; j < A; ++j) {
                        if (p[j] > 0.0) entropy -= p[j] * std::log(p[j]);
                        rterm += p[j] * qw[static_cast<size_t>(t) * A + j];
                    }
                    loss += -cfg.entropy_coef * entropy / T;
                    loss += -net.lambda * rterm / T;

                    for (int j = 0; j < A; ++j) {
                        double g = 0.0;
                        if (p[j] > 0.0) {
                            const double e_aj = (j == a) ? 1.0 : 0.0;
                            g += -(gsurr / T) * (e_aj - p[j]);
                            // entropy gradient: dH/dz_j = -p_j (log p_j + H)
                            g += (cfg.entropy_coef / T) * p[j] *
                                 (std::log(p[j]) + entropy);
                            // robustness gradient: dR/dz_j = p_j (q_j - R)
                            g += -(net.lambda / T) * p[j] *
                                 (qw[static_cast<size_t>(t) * A + j] - rterm);
                        }
                        dlogits[j] = g;
                    }
                    net.policy.backward(ws, dlogits, grad);
                }
                check_finite(loss, "policy update");
                net.opt_policy.step(net.policy.params(), grad);
            }
        }

        if (!cfg.lambda_frozen) {
            net.lambda = std::min(cfg.lambda_max, net.lambda + cfg.lambda_step);
        }
    }
    ++ts.epoch;
}

TrainResult train(const SimConfig& sim, const TrainConfig& cfg,
                  std::uint64_t seed,
                  const std::function<void(const EpisodeCurve&)>& on_episode) {
    World world(sim, seed);
    const int obs_dim = world.codec().dim();
    const int joint_dim =
        cfg.critic_uses_delayed ? obs_dim : obs_dim * world.n_agents();
    const int A = world.n_actions();

    std::mt19937_64 init_rng(mix64(seed ^ 0x11ULL));
    std::mt19937_64 policy_rng(mix64(seed ^ 0x22ULL));
    std::mt19937_64 perturb_rng(mix64(seed ^ 0x33ULL));

    TrainResult result;
    result.state = make_trainer(obs_dim, joint_dim, A, cfg, init_rng);
    TrainerState& ts = result.state;

    const int n = world.n_agents();
    for (int episode = 0; episode < cfg.n_episodes; ++episode) {
        const double eps = epsilon_at(cfg, episode);
        world.reset(mix64(seed ^ (0xE9150DEULL + episode)));

        std::vector<RolloutMemory> mems(n);
        for (auto& m : mems) {
            m.obs_dim = obs_dim;
            m.joint_dim = joint_dim;
            m.num_actions = A;
        }
        std::vector<bool> closed(n, false);

        while (!world.episode_over()) {
            const std::vector<double> joint =
                cfg.critic_uses_delayed ? std::vector<double>{}
                                        : world.joint_obs_vec();
            std::vector<int> actions(n, 1);
            std::vector<SelectResult> sels(n);
            std::vector<std::vector<double>> obs(n);
            std::vector<std::vector<int>> sets(n);

            for (int i = 0; i < n; ++i) {
                if (world.status(i) != AgentStatus::Active) continue;
                obs[i] = world.obs_vec(i);
                sets[i] = world.selectable(i);
                sels[i] = select_action(ts.agents[i].policy, obs[i], sets[i], A,
                                        eps, policy_rng);
                actions[i] = sels[i].action;
            }

            const StepOutcome out = world.step(actions);

            for (int i = 0; i < n; ++i) {
                if (obs[i].empty() || closed[i]) continue;
                RolloutMemory& m = mems[i];
                const std::vector<double>& critic_in =
                    cfg.critic_uses_delayed ? obs[i] : joint;
                m.obs.insert(m.obs.end(), obs[i].begin(), obs[i].end());
                m.joint_obs.insert(m.joint_obs.end(), critic_in.begin(),
                                   critic_in.end());
                m.actions.push_back(out.agents[i].executed);
                m.rewards.push_back(out.agents[i].reward.total);
                double v;
                ts.agents[i].critic.forward(critic_in, {&v, 1});
                m.values.push_back(v);
                m.logprobs.push_back(sels[i].logprob);
                m.dones.push_back(out.agents[i].done ? 1 : 0);
                std::vector<std::uint8_t> mask(A, 0);
                for (int s : sets[i]) mask[s] = 1;
                if (sets[i].empty()) mask[0] = 1;  // forced emergency stop
                m.masks.insert(m.masks.end(), mask.begin(), mask.end());
                if (out.agents[i].done) closed[i] = true;
            }
        }

        // Bootstrap for capped (still active) agents.
        const std::vector<double> joint =
            cfg.critic_uses_delayed ? std::vector<double>{}
                                    : world.joint_obs_vec();
        for (int i = 0; i < n; ++i) {
            RolloutMemory& m = mems[i];
            if (m.size() == 0) continue;
            if (!m.dones.back()) {
                m.final_obs = world.obs_vec(i);
                double v;
                ts.agents[i].critic.forward(
                    cfg.critic_uses_delayed ? m.final_obs : joint, {&v, 1});
                m.final_value = v;
            }
        }

        ppo_update(mems, ts, cfg, perturb_rng);

        const Metrics met = world.metrics();
        EpisodeCurve row;
        row.episode = episode;
        row.efficiency_return = met.efficiency_return;
        row.collisions = met.collisions;
        double lam = 0.0;
        for (const auto& a : ts.agents) lam += a.lambda;
        row.mean_lambda = lam / static_cast<double>(ts.agents.size());
        double flow = 0.0;
        long cnt = 0;
        for (const auto& tk : world.trace()) {
            for (const auto& ar : tk.agents) {
                if (ar.stepped) {
                    flow += ar.reward.flow;
                    ++cnt;
                }
            }
        }
        row.mean_flow = cnt ? flow / static_cast<double>(cnt) : 0.0;
        row.epsilon = eps;
        result.curves.push_back(row);
        if (on_episode) on_episode(row);
    }
    return result;
}

}  // namespace cavsim
