#include "cavsim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>

namespace cavsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t episode_seed(std::uint64_t base, int episode) {
    return mix64(base ^ (0xEA10ULL + static_cast<std::uint64_t>(episode)));
}

}  // namespace

std::optional<Method> parse_method(const std::string& s) {
    if (s == "rsr-rsmarl") return Method::RsrRsmarl;
    if (s == "rsr-marl") return Method::RsrMarl;
    if (s == "nocomm") return Method::NoComm;
    if (s == "nonrobust") return Method::NonRobust;
    if (s == "marl-dr") return Method::MarlDr;
    if (s == "custom") return Method::Custom;
    return std::nullopt;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::RsrRsmarl: return "rsr-rsmarl";
        case Method::RsrMarl: return "rsr-marl";
        case Method::NoComm: return "nocomm";
        case Method::NonRobust: return "nonrobust";
        case Method::MarlDr: return "marl-dr";
        case Method::Custom: return "custom";
    }
    return "?";
}

void apply_method(io::RunBundle& b, Method m) {
    Toggles& t = b.sim.toggles;
    ChannelConfig& ch = b.sim.channel;
    switch (m) {
        case Method::RsrRsmarl:
            t.shield = true;
            ch.enabled = true;
            t.lambda_frozen = false;
            ch.obs_noise_sigma = 0.0;
            break;
        case Method::RsrMarl:
            t.shield = false;
            ch.enabled = true;
            t.lambda_frozen = false;
            ch.obs_noise_sigma = 0.0;
            break;
        case Method::NoComm:
            t.shield = true;
            ch.enabled = false;
            t.lambda_frozen = false;
            ch.obs_noise_sigma = 0.0;
            break;
        case Method::NonRobust:
            t.shield = false;
            ch.enabled = true;
            t.lambda_frozen = true;
            ch.obs_noise_sigma = 0.0;
            break;
        case Method::MarlDr:
            t.shield = true;
            ch.enabled = true;
            t.lambda_frozen = false;
            if (ch.obs_noise_sigma <= 0.0) ch.obs_noise_sigma = 0.05;
            break;
        case Method::Custom:
            break;
    }
    b.train.lambda_frozen = t.lambda_frozen;
}

Metrics rollout_episode(World& world, std::uint64_t seed,
                        const TrainerState* nets,
                        std::optional<ScriptedPolicy> scripted) {
    world.reset(seed);
    std::mt19937_64 rng(mix64(seed ^ 0x5c17ULL));
    const int n = world.n_agents();
    const int A = world.n_actions();

    while (!world.episode_over()) {
        std::vector<int> actions(n, 1);
        for (int i = 0; i < n; ++i) {
            if (world.status(i) != AgentStatus::Active) continue;
            const std::vector<int> sel = world.selectable(i);
            if (scripted) {
                if (*scripted == ScriptedPolicy::MaintainAlways) {
                    actions[i] = 1;  // the env swaps to EmergencyStop if unsafe
                } else if (sel.empty()) {
                    actions[i] = 0;
                } else {
                    std::uniform_int_distribution<size_t> pick(0, sel.size() - 1);
                    actions[i] = sel[pick(rng)];
                }
            } else {
                const auto obs = world.obs_vec(i);
                actions[i] = select_action(nets->agents[i].policy, obs, sel, A,
                                           0.0, rng, /*greedy=*/true)
                                 .action;
            }
        }
        world.step(actions);
    }
    return world.metrics();
}

namespace {

struct LoadedRun {
    io::RunBundle bundle;
    Method method = Method::RsrRsmarl;
    std::string hash;
};

int load_run(const RunOptions& opts, LoadedRun& out) {
    const auto m = parse_method(opts.method);
    if (!m) {
        std::cerr << "error: unknown method '" << opts.method << "'\n";
        return kExitBadInput;
    }
    out.method = *m;
    try {
        out.bundle = opts.config_path.empty()
                         ? io::RunBundle{}
                         : io::load_config_file(opts.config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    apply_method(out.bundle, out.method);
    out.hash = io::config_hash(out.bundle);
    return kExitOk;
}

void write_config_snapshot(const fs::path& dir, const LoadedRun& run,
                           std::uint64_t seed) {
    json j = io::to_json(run.bundle);
    j["method"] = method_name(run.method);
    j["seed"] = seed;
    j["config_hash"] = run.hash;
    std::ofstream f(dir / "config.json");
    f << j.dump(2) << "\n";
}

json trace_header(const LoadedRun& run, std::uint64_t seed, int episode) {
    return {{"config_hash", run.hash},
            {"method", method_name(run.method)},
            {"seed", seed},
            {"episode", episode}};
}

struct EpisodeOut {
    Metrics metrics;
    std::vector<TraceTick> trace;
    std::vector<ChannelEvent> channel;
};

// Fan episodes out across worker threads; results land by episode index
// so aggregation order is deterministic.
std::vector<EpisodeOut> run_episodes(const LoadedRun& run,
                                     const RunOptions& opts, int n_episodes,
                                     const TrainerState* nets,
                                     std::optional<ScriptedPolicy> scripted) {
    std::vector<EpisodeOut> results(n_episodes);
    int n_workers = opts.threads > 0
                        ? opts.threads
                        : static_cast<int>(std::min(
                              4u, std::max(1u, std::thread::hardware_concurrency())));
    n_workers = std::min(n_workers, n_episodes);

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int e = next.fetch_add(1);
            if (e >= n_episodes) break;
            World world(run.bundle.sim, 0);
            if (opts.channel_trace && e == 0) world.set_channel_trace(true);
            results[e].metrics =
                rollout_episode(world, episode_seed(opts.seed, e), nets, scripted);
            results[e].trace = world.trace();
            if (opts.channel_trace && e == 0)
                results[e].channel = world.bus().events();
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return results;
}

int write_episode_outputs(const LoadedRun& run, const RunOptions& opts,
                          const std::vector<EpisodeOut>& results) {
    const fs::path dir(opts.out_dir);
    for (size_t e = 0; e < results.size(); ++e) {
        io::write_trace_jsonl(
            (dir / ("trace_ep" + std::to_string(e) + ".jsonl")).string(),
            results[e].trace,
            trace_header(run, opts.seed, static_cast<int>(e)));
    }
    if (opts.channel_trace && !results.empty()) {
        io::write_channel_trace_jsonl((dir / "channel_ep0.jsonl").string(),
                                      results[0].channel);
    }
    io::MetricsRow row;
    row.scenario = run.bundle.sim.scenario.name;
    row.method = method_name(run.method);
    row.episodes = static_cast<int>(results.size());
    for (const auto& r : results) {
        row.collisions += r.metrics.collisions;
        row.mean_time_s += r.metrics.time_s;
        row.mean_efficiency_return += r.metrics.efficiency_return;
        row.mean_intervention_rate += r.metrics.intervention_rate;
    }
    if (!results.empty()) {
        const double n = static_cast<double>(results.size());
        row.mean_time_s /= n;
        row.mean_efficiency_return /= n;
        row.mean_intervention_rate /= n;
    }
    io::write_metrics_csv((dir / "metrics.csv").string(), row, run.hash,
                          opts.seed);
    std::cout << "episodes=" << row.episodes << " collisions=" << row.collisions
              << " mean_time_s=" << io::format_double(row.mean_time_s)
              << " mean_efficiency_return="
              << io::format_double(row.mean_efficiency_return)
              << " mean_intervention_rate="
              << io::format_double(row.mean_intervention_rate) << "\n";
    return kExitOk;
}

}  // namespace

int run_train(const RunOptions& opts) {
    LoadedRun run;
    if (int rc = load_run(opts, run); rc != kExitOk) return rc;
    if (opts.episodes > 0) run.bundle.train.n_episodes = opts.episodes;
    // episode override participates in the hash: re-resolve
    run.hash = io::config_hash(run.bundle);

    fs::create_directories(opts.out_dir);
    write_config_snapshot(opts.out_dir, run, opts.seed);

    TrainResult res;
    bool aborted = false;
    std::string abort_reason;
    try {
        res = train(run.bundle.sim, run.bundle.train, opts.seed);
    } catch (const TrainAbort& e) {
        aborted = true;
        abort_reason = e.what();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }

    const fs::path dir(opts.out_dir);
    io::write_curves_csv((dir / "curves.csv").string(), res.curves, run.hash,
                         opts.seed);
    io::Checkpoint ck;
    ck.config_hash = run.hash;
    ck.seed = opts.seed;
    if (!res.state.agents.empty()) {
        ck.obs_dim = res.state.agents[0].policy.input_dim();
        ck.num_actions = res.state.agents[0].policy.output_dim();
        ck.joint_dim = res.state.agents[0].critic.input_dim();
    }
    ck.state = std::move(res.state);
    io::save_checkpoint(
        (dir / (aborted ? "abort_checkpoint.json" : "checkpoint.json")).string(),
        ck);
    if (aborted) {
        std::cerr << "training aborted: " << abort_reason
                  << " (diagnostic checkpoint written)\n";
        return kExitTrainAbort;
    }
    std::cout << "trained " << res.curves.size() << " episodes; checkpoint at "
              << (dir / "checkpoint.json").string() << "\n";
    return kExitOk;
}

int run_eval(const RunOptions& opts) {
    LoadedRun run;
    if (int rc = load_run(opts, run); rc != kExitOk) return rc;

    io::Checkpoint ck;
    try {
        ck = io::load_checkpoint(opts.checkpoint_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    if (ck.config_hash != run.hash) {
        std::cerr << "error: checkpoint config hash " << ck.config_hash
                  << " does not match resolved config " << run.hash << "\n";
        return kExitHashMismatch;
    }

    const int n_episodes = opts.episodes > 0 ? opts.episodes : 50;
    fs::create_directories(opts.out_dir);
    write_config_snapshot(opts.out_dir, run, opts.seed);
    const auto results =
        run_episodes(run, opts, n_episodes, &ck.state, std::nullopt);
    return write_episode_outputs(run, opts, results);
}

int run_scripted(const RunOptions& opts) {
    LoadedRun run;
    if (int rc = load_run(opts, run); rc != kExitOk) return rc;

    std::optional<ScriptedPolicy> pol;
    if (opts.policy == "maintain") pol = ScriptedPolicy::MaintainAlways;
    else if (opts.policy == "random") pol = ScriptedPolicy::Random;
    if (!pol) {
        std::cerr << "error: unknown scripted policy '" << opts.policy << "'\n";
        return kExitBadInput;
    }

    const int n_episodes = opts.episodes > 0 ? opts.episodes : 1;
    fs::create_directories(opts.out_dir);
    write_config_snapshot(opts.out_dir, run, opts.seed);
    const auto results = run_episodes(run, opts, n_episodes, nullptr, pol);
    return write_episode_outputs(run, opts, results);
}

}  // namespace cavsim
