#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cavsim/marl.hpp"
#include "oracles.hpp"

using namespace cavsim;

TEST_CASE("MlpNet forward") {
    SUBCASE("all-zero parameters give all-zero output") {
        MlpNet net = MlpNet::zeros({4, 8, 8, 3});
        const std::vector<double> in{0.3, -0.2, 1.0, 0.5};
        for (double y : net.forward(in)) CHECK(y == 0.0);
    }
    SUBCASE("1-1-1 identity passes positive inputs through") {
        MlpNet net = MlpNet::zeros({1, 1, 1});
        net.params() = {1.0, 0.0, 1.0, 0.0};  // W1=1,b1=0,W2=1,b2=0
        const std::vector<double> out = net.forward(std::vector<double>{2.0});
        CHECK(out[0] == doctest::Approx(2.0));
        // negative input dies at the hidden ReLU
        CHECK(net.forward(std::vector<double>{-2.0})[0] == doctest::Approx(0.0));
    }
    SUBCASE("dimension mismatch throws") {
        MlpNet net = MlpNet::zeros({4, 8, 2});
        CHECK_THROWS(net.forward(std::vector<double>{1.0, 2.0}));
    }
    SUBCASE("parameter count matches sum of (fan_in+1)*fan_out") {
        MlpNet net = MlpNet::zeros({28, 64, 64, 8});
        CHECK(net.n_params() == (28 + 1) * 64 + (64 + 1) * 64 + (64 + 1) * 8);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    // The three production shapes at reduced width; 10 random draws each,
    // relative error under 1e-4.
    std::mt19937_64 rng(314);
    const std::vector<std::vector<int>> shapes = {
        {6, 12, 12, 4},   // policy-like
        {12, 12, 12, 1},  // centralized-critic-like
        {10, 12, 12, 1},  // worst-Q-like
    };
    std::uniform_real_distribution<double> uin(-1.0, 1.0);
    for (const auto& shape : shapes) {
        for (int draw = 0; draw < 10; ++draw) {
            MlpNet net = MlpNet::make(shape, rng);
            std::vector<double> in(shape.front());
            for (double& x : in) x = uin(rng);
            std::vector<double> c(shape.back());
            for (double& x : c) x = uin(rng);

            MlpNet::Workspace ws;
            std::vector<double> out(shape.back());
            net.forward(in, out, &ws);
            std::vector<double> analytic(net.n_params(), 0.0);
            net.backward(ws, c, analytic);

            auto loss = [&](const std::vector<double>& params) {
                MlpNet probe = net;
                probe.params() = params;
                const auto o = probe.forward(in);
                double l = 0.0;
                for (size_t k = 0; k < o.size(); ++k) l += c[k] * o[k];
                return l;
            };
            const auto fd = oracles::fd_gradient(loss, net.params());
            double num = 0.0, den = 0.0;
            for (size_t i = 0; i < fd.size(); ++i) {
                num += (analytic[i] - fd[i]) * (analytic[i] - fd[i]);
                den += fd[i] * fd[i];
            }
            CHECK(std::sqrt(num) / std::max(std::sqrt(den), 1e-12) < 1e-4);
        }
    }
}

TEST_CASE("backward also produces input gradients") {
    std::mt19937_64 rng(9);
    MlpNet net = MlpNet::make({5, 8, 3}, rng);
    std::vector<double> in{0.1, -0.4, 0.7, 0.2, -0.9};
    std::vector<double> c{0.3, -1.1, 0.5};
    MlpNet::Workspace ws;
    std::vector<double> out(3);
    net.forward(in, out, &ws);
    std::vector<double> grad(net.n_params(), 0.0), din(5, 0.0);
    net.backward(ws, c, grad, din);

    auto loss = [&](const std::vector<double>& x) {
        const auto o = net.forward(x);
        double l = 0.0;
        for (size_t k = 0; k < o.size(); ++k) l += c[k] * o[k];
        return l;
    };
    const auto fd = oracles::fd_gradient(loss, in);
    for (size_t i = 0; i < in.size(); ++i)
        CHECK(din[i] == doctest::Approx(fd[i]).epsilon(1e-6));
}

TEST_CASE("masked_softmax") {
    const std::vector<double> logits{1.0, 2.0, 3.0, 4.0};
    SUBCASE("masked entries get zero probability, rest sums to one") {
        const auto p = masked_softmax(logits, {1, 0, 1, 0});
        CHECK(p[1] == 0.0);
        CHECK(p[3] == 0.0);
        CHECK(p[0] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p[2] > p[0]);
    }
    SUBCASE("uniform logits over a mask of three") {
        const std::vector<double> z(4, 0.0);
        const auto p = masked_softmax(z, {1, 1, 1, 0});
        CHECK(p[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(p[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("select_action") {
    std::mt19937_64 rng(21);
    MlpNet policy = MlpNet::zeros({4, 8, 8, 8});  // uniform logits

    SUBCASE("empty safe set falls back to the emergency stop") {
        for (int k = 0; k < 20; ++k) {
            const auto r = select_action(policy, std::vector<double>(4, 0.1), {},
                                         8, 0.5, rng);
            CHECK(r.action == 0);
            CHECK(r.logprob == 0.0);
        }
    }
    SUBCASE("eps = 1 is uniform over the safe set (chi-square)") {
        const std::vector<int> safe{1, 3, 5, 7};
        std::vector<int> counts(8, 0);
        const int N = 10000;
        for (int k = 0; k < N; ++k) {
            const auto r = select_action(policy, std::vector<double>(4, 0.0),
                                         safe, 8, 1.0, rng);
            counts[r.action]++;
        }
        double chi2 = 0.0;
        const double expect = N / 4.0;
        for (int a : safe) chi2 += (counts[a] - expect) * (counts[a] - expect) / expect;
        CHECK(counts[0] + counts[2] + counts[4] + counts[6] == 0);
        CHECK(chi2 < 16.27);  // 3 dof, p = 0.001
    }
    SUBCASE("eps = 0 with uniform logits samples each safe action ~1/3") {
        const std::vector<int> safe{2, 4, 6};
        std::vector<int> counts(8, 0);
        const int N = 9000;
        for (int k = 0; k < N; ++k) {
            const auto r = select_action(policy, std::vector<double>(4, 0.0),
                                         safe, 8, 0.0, rng);
            counts[r.action]++;
            CHECK(r.logprob == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-9));
        }
        for (int a : safe) CHECK(std::abs(counts[a] - 3000) < 300);
    }
    SUBCASE("greedy picks the masked argmax") {
        std::mt19937_64 rng2(5);
        MlpNet p2 = MlpNet::make({4, 8, 8, 8}, rng2);
        const std::vector<double> obs{0.2, -0.1, 0.4, 0.9};
        const auto logits = p2.forward(obs);
        const std::vector<int> safe{1, 2, 3};
        const auto r = select_action(p2, obs, safe, 8, 0.0, rng2, true);
        int best = safe[0];
        for (int a : safe)
            if (logits[a] > logits[best]) best = a;
        CHECK(r.action == best);
    }
}

namespace {

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.n_agents = 1;
    cfg.hidden = 12;
    cfg.epochs = 2;
    cfg.n_episodes = 3;
    return cfg;
}

// Constant-observation memory with a constant reward.
RolloutMemory constant_memory(const TrainerState& ts, int T, double reward,
                              int obs_dim, int joint_dim, int A) {
    RolloutMemory m;
    m.obs_dim = obs_dim;
    m.joint_dim = joint_dim;
    m.num_actions = A;
    const std::vector<double> obs(obs_dim, 0.3);
    const std::vector<double> joint(joint_dim, 0.3);
    for (int t = 0; t < T; ++t) {
        m.obs.insert(m.obs.end(), obs.begin(), obs.end());
        m.joint_obs.insert(m.joint_obs.end(), joint.begin(), joint.end());
        m.actions.push_back(t % A);
        m.rewards.push_back(reward);
        double v;
        ts.agents[0].critic.forward(joint, {&v, 1});
        m.values.push_back(v);
        m.logprobs.push_back(std::log(1.0 / A));
        m.dones.push_back(0);
        m.masks.insert(m.masks.end(), A, 1);
    }
    m.final_obs = obs;
    double v;
    ts.agents[0].critic.forward(joint, {&v, 1});
    m.final_value = v;
    return m;
}

}  // namespace

TEST_CASE("ppo_update") {
    SUBCASE("empty memory throws") {
        TrainConfig cfg = tiny_cfg();
        std::mt19937_64 rng(1);
        TrainerState ts = make_trainer(6, 6, 4, cfg, rng);
        std::vector<RolloutMemory> mems(1);
        mems[0].obs_dim = 6;
        mems[0].joint_dim = 6;
        mems[0].num_actions = 4;
        std::mt19937_64 prng(2);
        CHECK_THROWS_AS(ppo_update(mems, ts, cfg, prng), std::invalid_argument);
    }
    SUBCASE("zero-advantage batch leaves the policy untouched") {
        TrainConfig cfg = tiny_cfg();
        cfg.entropy_coef = 0.0;
        cfg.rho = 0.0;
        cfg.discount_gamma = 0.9;
        std::mt19937_64 rng(3);
        TrainerState ts = make_trainer(6, 6, 4, cfg, rng);
        // v = r/(1-gamma) = 10 everywhere makes every TD residual zero
        auto& critic = ts.agents[0].critic;
        critic = MlpNet::zeros(critic.sizes());
        critic.params().back() = 10.0;  // output bias
        const auto before = ts.agents[0].policy.params();
        auto mem = constant_memory(ts, 20, 1.0, 6, 6, 4);
        std::mt19937_64 prng(4);
        ppo_update({mem}, ts, cfg, prng);
        const auto& after = ts.agents[0].policy.params();
        for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    }
    SUBCASE("critic converges toward r/(1-gamma) on constant rewards") {
        TrainConfig cfg = tiny_cfg();
        cfg.discount_gamma = 0.9;
        cfg.lr_critic = 0.05;
        cfg.epochs = 5;
        cfg.rho = 0.0;
        std::mt19937_64 rng(5);
        TrainerState ts = make_trainer(6, 6, 4, cfg, rng);
        const std::vector<double> joint(6, 0.3);
        double v0;
        ts.agents[0].critic.forward(joint, {&v0, 1});
        std::mt19937_64 prng(6);
        for (int it = 0; it < 150; ++it) {
            auto mem = constant_memory(ts, 16, 1.0, 6, 6, 4);
            ppo_update({mem}, ts, cfg, prng);
        }
        double v1;
        ts.agents[0].critic.forward(joint, {&v1, 1});
        CHECK(std::abs(v1 - 10.0) < 0.2 * std::abs(v0 - 10.0));
        CHECK(std::abs(v1 - 10.0) < 1.0);
    }
    SUBCASE("rho = 0 makes the perturbation set degenerate") {
        TrainConfig a = tiny_cfg(), b = tiny_cfg();
        a.rho = 0.0;
        a.n_perturb = 1;
        b.rho = 0.0;
        b.n_perturb = 8;
        std::mt19937_64 r1(7), r2(7);
        TrainerState t1 = make_trainer(6, 6, 4, a, r1);
        TrainerState t2 = make_trainer(6, 6, 4, b, r2);
        auto m1 = constant_memory(t1, 12, 0.5, 6, 6, 4);
        auto m2 = constant_memory(t2, 12, 0.5, 6, 6, 4);
        std::mt19937_64 p1(8), p2(8);
        ppo_update({m1}, t1, a, p1);
        ppo_update({m2}, t2, b, p2);
        CHECK(t1.agents[0].worst_q.params() == t2.agents[0].worst_q.params());
        CHECK(t1.agents[0].policy.params() == t2.agents[0].policy.params());
    }
    SUBCASE("lambda ramps additively and respects the cap and freeze") {
        TrainConfig cfg = tiny_cfg();
        cfg.lambda_step = 0.2;
        cfg.lambda_max = 0.5;
        std::mt19937_64 rng(11);
        TrainerState ts = make_trainer(6, 6, 4, cfg, rng);
        std::mt19937_64 prng(12);
        double prev = 0.0;
        for (int it = 0; it < 5; ++it) {
            auto mem = constant_memory(ts, 8, 0.1, 6, 6, 4);
            ppo_update({mem}, ts, cfg, prng);
            CHECK(ts.agents[0].lambda >= prev);
            prev = ts.agents[0].lambda;
        }
        CHECK(ts.agents[0].lambda == doctest::Approx(0.5));

        cfg.lambda_frozen = true;
        TrainerState tf = make_trainer(6, 6, 4, cfg, rng);
        auto mem = constant_memory(tf, 8, 0.1, 6, 6, 4);
        ppo_update({mem}, tf, cfg, prng);
        CHECK(tf.agents[0].lambda == 0.0);
    }
}

TEST_CASE("rollout respects the safe-set mask") {
    SimConfig sim;
    sim.scenario.n_agents = 3;
    sim.scenario.initial_target_speed = 1.5;
    sim.scenario.obstacles = {{1, 8.0}, {0, 12.0}};
    sim.toggles.shield = true;
    World world(sim, 77);
    TrainConfig cfg;
    cfg.n_agents = 3;
    cfg.hidden = 12;
    std::mt19937_64 rng(13);
    TrainerState ts =
        make_trainer(world.codec().dim(), world.codec().dim() * 3,
                     world.n_actions(), cfg, rng);
    std::mt19937_64 arng(14);
    while (!world.episode_over()) {
        std::vector<int> actions(3, 1);
        for (int i = 0; i < 3; ++i) {
            if (world.status(i) != AgentStatus::Active) continue;
            const auto sel = world.selectable(i);
            const auto r = select_action(ts.agents[i].policy, world.obs_vec(i),
                                         sel, world.n_actions(), 0.3, arng);
            if (sel.empty()) {
                CHECK(r.action == 0);
            } else {
                CHECK(std::find(sel.begin(), sel.end(), r.action) != sel.end());
            }
            actions[i] = r.action;
        }
        world.step(actions);
    }
    // masked selection means the env never had to swap an action
    for (const auto& tk : world.trace()) {
        for (const auto& a : tk.agents) {
            if (a.stepped) CHECK(a.chosen == a.executed);
        }
    }
}

TEST_CASE("critic input modes") {
    SimConfig sim;
    sim.scenario.n_agents = 2;
    sim.scenario.episode_len = 20;
    sim.scenario.initial_target_speed = 1.0;
    TrainConfig cfg;
    cfg.n_agents = 2;
    cfg.hidden = 12;
    cfg.epochs = 1;
    cfg.n_episodes = 2;
    cfg.n_perturb = 1;

    cfg.critic_uses_delayed = false;
    const auto fresh = train(sim, cfg, 31);
    cfg.critic_uses_delayed = true;
    const auto delayed = train(sim, cfg, 31);

    World probe(sim, 0);
    const int obs_dim = probe.codec().dim();
    CHECK(fresh.state.agents[0].critic.input_dim() == 2 * obs_dim);
    CHECK(delayed.state.agents[0].critic.input_dim() == obs_dim);
}

TEST_CASE("training with the shield on records zero collisions") {
    SimConfig sim;
    sim.scenario.n_agents = 3;
    sim.scenario.episode_len = 150;
    sim.scenario.initial_target_speed = 1.5;
    sim.scenario.obstacles = {{1, 8.0}, {0, 12.0}};
    sim.toggles.shield = true;
    TrainConfig cfg;
    cfg.n_agents = 3;
    cfg.hidden = 16;
    cfg.epochs = 2;
    cfg.n_episodes = 4;
    cfg.n_perturb = 2;
    const auto res = train(sim, cfg, 5);
    for (const auto& row : res.curves) CHECK(row.collisions == 0);
}

TEST_CASE("train is deterministic and advances lambda") {
    SimConfig sim;
    sim.scenario.n_agents = 2;
    sim.scenario.episode_len = 30;
    sim.scenario.initial_target_speed = 1.0;
    TrainConfig cfg;
    cfg.n_agents = 2;
    cfg.hidden = 12;
    cfg.epochs = 2;
    cfg.n_episodes = 3;
    cfg.n_perturb = 2;
    const auto a = train(sim, cfg, 99);
    const auto b = train(sim, cfg, 99);
    REQUIRE(a.curves.size() == 3);
    REQUIRE(b.curves.size() == 3);
    for (size_t e = 0; e < a.curves.size(); ++e) {
        CHECK(a.curves[e].efficiency_return == b.curves[e].efficiency_return);
        CHECK(a.curves[e].collisions == b.curves[e].collisions);
        CHECK(a.curves[e].mean_flow == b.curves[e].mean_flow);
    }
    CHECK(a.curves.back().mean_lambda > 0.0);
    for (size_t i = 0; i < a.state.agents[0].policy.params().size(); ++i) {
        CHECK(a.state.agents[0].policy.params()[i] ==
              b.state.agents[0].policy.params()[i]);
    }
}
