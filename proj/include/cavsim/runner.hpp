#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cavsim/io.hpp"
#include "cavsim/marl.hpp"

// Operational entry points behind the CLI subcommands. Each returns a
// process exit code: 0 ok, 2 unreadable/invalid inputs, 3 training abort
// on non-finite loss, 4 checkpoint/config hash mismatch.

namespace cavsim {

inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitTrainAbort = 3;
inline constexpr int kExitHashMismatch = 4;

// Named methods are presets over independent toggles (shield, comm,
// noise, lambda freeze); "custom" leaves the config's toggles untouched.
enum class Method { RsrRsmarl, RsrMarl, NoComm, NonRobust, MarlDr, Custom };

std::optional<Method> parse_method(const std::string& s);
std::string method_name(Method m);
void apply_method(io::RunBundle& b, Method m);

enum class ScriptedPolicy { MaintainAlways, Random };

struct RunOptions {
    std::string config_path;  // empty = built-in defaults
    std::string method = "rsr-rsmarl";
    std::uint64_t seed = 0;
    int episodes = -1;  // <=0 keeps the per-command default
    std::string out_dir = "out";
    std::string checkpoint_path;
    std::string policy = "maintain";  // scripted: maintain | random
    int threads = 0;                  // 0 = auto
    bool channel_trace = false;       // dump episode-0 channel events
};

int run_train(const RunOptions& opts);
int run_eval(const RunOptions& opts);
int run_scripted(const RunOptions& opts);

// One evaluation/scripted episode through the full comm+shield stack.
// Exactly one of `nets` (greedy policy execution) or `scripted` must be
// given. Returns the episode metrics; the trace stays on the world.
Metrics rollout_episode(World& world, std::uint64_t episode_seed,
                        const TrainerState* nets,
                        std::optional<ScriptedPolicy> scripted);

}  // namespace cavsim
