// Drives the real binary (argv[1]) through its documented surface:
// subcommand exit codes, method-preset semantics, artifact layout, and
// the ordering example for the domain-randomized evaluation.

#include <cassert>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cavsim/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_bin;
fs::path g_dir;

int run(const std::string& args) {
    const std::string cmd = g_bin + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// metrics.csv: header line then a single aggregate row
std::vector<std::string> metrics_row(const fs::path& p) {
    std::ifstream f(p);
    std::string header, row, cell;
    std::getline(f, header);
    std::getline(f, row);
    std::vector<std::string> cells;
    std::stringstream ss(row);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;  // scenario,method,episodes,collisions,mean_time_s,eff,intervention,hash,seed
}

void write_base_config(const fs::path& p) {
    std::ofstream f(p);
    f << R"({
  "scenario": {"n_agents": 3, "episode_len": 120,
               "initial_target_speed": 1.5,
               "obstacles": [{"lane": 1, "x": 10.0}]},
  "train": {"n_episodes": 3, "epochs": 2, "hidden": 16, "n_perturb": 2}
})";
}

#define CHECK(cond)                                                       \
    do {                                                                  \
        if (!(cond)) {                                                    \
            std::fprintf(stderr, "FAILED: %s (line %d)\n", #cond, __LINE__); \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int run_all() {
    const fs::path cfg = g_dir / "cfg.json";
    write_base_config(cfg);
    const std::string common = "--config " + cfg.string() + " --seed 5 ";

    // --- exit codes ------------------------------------------------
    CHECK(run("train --config /nonexistent.json --out " +
              (g_dir / "x").string()) == 2);
    {
        std::ofstream bad(g_dir / "bad.json");
        bad << "{\"scenario\": {";
    }
    CHECK(run("train --config " + (g_dir / "bad.json").string() + " --out " +
              (g_dir / "x").string()) == 2);
    CHECK(run("train --method bogus --out " + (g_dir / "x").string()) == 2);

    // --- train writes checkpoint, curves, resolved config ----------
    CHECK(run("train " + common + "--out " + (g_dir / "t0").string()) == 0);
    CHECK(fs::exists(g_dir / "t0/checkpoint.json"));
    CHECK(fs::exists(g_dir / "t0/curves.csv"));
    CHECK(fs::exists(g_dir / "t0/config.json"));

    // byte-identical curves on a repeat run
    CHECK(run("train " + common + "--out " + (g_dir / "t1").string()) == 0);
    CHECK(slurp(g_dir / "t0/curves.csv") == slurp(g_dir / "t1/curves.csv"));

    // --- checkpoint hash gate --------------------------------------
    const std::string ck =
        "--checkpoint " + (g_dir / "t0/checkpoint.json").string() + " ";
    {
        std::ofstream f(g_dir / "cfg2.json");
        f << R"({"scenario": {"n_agents": 3, "episode_len": 121,
                 "initial_target_speed": 1.5,
                 "obstacles": [{"lane": 1, "x": 10.0}]},
                 "train": {"n_episodes": 3, "epochs": 2, "hidden": 16, "n_perturb": 2}})";
    }
    CHECK(run("eval " + ck + "--config " + (g_dir / "cfg2.json").string() +
              " --out " + (g_dir / "x").string()) == 4);
    CHECK(run("eval " + ck + "--config " + cfg.string() +
              " --seed 5 --episodes 3 --out " + (g_dir / "e0").string()) == 0);
    CHECK(fs::exists(g_dir / "e0/trace_ep0.jsonl"));
    CHECK(fs::exists(g_dir / "e0/trace_ep2.jsonl"));
    CHECK(fs::exists(g_dir / "e0/metrics.csv"));

    // --- shield toggle: rsr-marl reports a zero intervention rate --
    CHECK(run("scripted --policy random --episodes 3 --method rsr-marl " +
              common + "--out " + (g_dir / "soff").string()) == 0);
    {
        const auto row = metrics_row(g_dir / "soff/metrics.csv");
        CHECK(row.size() == 9);
        CHECK(row[1] == "rsr-marl");
        CHECK(std::stod(row[6]) == 0.0);
    }

    // --- scripted maintain into an obstacle: shield decides --------
    {
        std::ofstream f(g_dir / "solo.json");
        f << R"({"scenario": {"n_agents": 1, "spawn_lane": [1],
                 "episode_len": 200, "initial_target_speed": 1.5,
                 "obstacles": [{"lane": 1, "x": 10.0}]}})";
    }
    const std::string solo = "--config " + (g_dir / "solo.json").string() + " ";
    CHECK(run("scripted --policy maintain --method rsr-rsmarl " + solo +
              "--out " + (g_dir / "m_on").string()) == 0);
    CHECK(std::stoi(metrics_row(g_dir / "m_on/metrics.csv")[3]) == 0);
    CHECK(run("scripted --policy maintain --method rsr-marl " + solo + "--out " +
              (g_dir / "m_off").string()) == 0);
    CHECK(std::stoi(metrics_row(g_dir / "m_off/metrics.csv")[3]) >= 1);

    // --- marl-dr evaluation: collisions >= the shield-on baseline --
    CHECK(run("eval " + ck + "--config " + cfg.string() +
              " --seed 5 --episodes 3 --method marl-dr --out " +
              (g_dir / "edr").string()) == 0);
    {
        const int base = std::stoi(metrics_row(g_dir / "e0/metrics.csv")[3]);
        const int dr = std::stoi(metrics_row(g_dir / "edr/metrics.csv")[3]);
        CHECK(dr >= base);
    }

    // --- channel trace export --------------------------------------
    CHECK(run("scripted --policy random --episodes 1 --channel-trace " + common +
              "--out " + (g_dir / "ct").string()) == 0);
    CHECK(fs::exists(g_dir / "ct/channel_ep0.jsonl"));
    {
        std::ifstream f(g_dir / "ct/channel_ep0.jsonl");
        std::string line;
        CHECK(static_cast<bool>(std::getline(f, line)));
        CHECK(line.find("\"delivered_tick\"") != std::string::npos);
        CHECK(line.find("\"sender\"") != std::string::npos);
    }

    // --- environment variable overrides -----------------------------
    {
        const std::string cmd = "CAVSIM_SEED=5 " + g_bin +
                                " scripted --policy random --episodes 2 --config " +
                                cfg.string() + " --out " +
                                (g_dir / "env0").string() + " >/dev/null 2>&1";
        CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
        CHECK(run("scripted --policy random --episodes 2 " + common + "--out " +
                  (g_dir / "env1").string()) == 0);
        CHECK(slurp(g_dir / "env0/metrics.csv") == slurp(g_dir / "env1/metrics.csv"));
    }

    // --- NaN abort: exit 3 plus a diagnostic checkpoint -------------
    {
        std::ofstream f(g_dir / "nan.json");
        f << R"({"scenario": {"n_agents": 1, "episode_len": 40},
                 "train": {"n_episodes": 2, "epochs": 2, "hidden": 8,
                           "lr_actor": 1e200, "lr_critic": 1e200, "n_perturb": 1}})";
    }
    CHECK(run("train --config " + (g_dir / "nan.json").string() + " --out " +
              (g_dir / "nanout").string()) == 3);
    CHECK(fs::exists(g_dir / "nanout/abort_checkpoint.json"));

    // --- checkpoint round-trips through io --------------------------
    {
        const auto ckpt =
            cavsim::io::load_checkpoint((g_dir / "t0/checkpoint.json").string());
        CHECK(ckpt.state.agents.size() == 3);
        const fs::path copy = g_dir / "ck_copy.json";
        cavsim::io::save_checkpoint(copy.string(), ckpt);
        const auto again = cavsim::io::load_checkpoint(copy.string());
        CHECK(again.state.agents[0].policy.params() ==
              ckpt.state.agents[0].policy.params());
        CHECK(again.config_hash == ckpt.config_hash);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <cavsim-binary>\n");
        return 2;
    }
    g_bin = argv[1];
    g_dir = fs::temp_directory_path() / "cavsim_cli_test";
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    const int rc = run_all();
    if (rc == 0) std::printf("test_cli: all checks passed\n");
    return rc;
}
