#include <CLI11.hpp>

#include "cavsim/runner.hpp"

// cavsim: multi-lane highway simulator with a CBF safety shield, delayed
// V2V sharing, and a robust multi-agent PPO trainer.
//
//   cavsim train    --config c.json --method rsr-rsmarl --seed 7 --out runs/t0
//   cavsim eval     --checkpoint runs/t0/checkpoint.json --config c.json ...
//   cavsim scripted --policy random --episodes 50 ...
//
// Every flag can also be set through CAVSIM_* environment variables.

int main(int argc, char** argv) {
    CLI::App app{"highway MARL simulator with CBF safety shield"};
    app.require_subcommand(1);

    cavsim::RunOptions opts;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "JSON config file")
            ->envname("CAVSIM_CONFIG");
        cmd->add_option("--method", opts.method,
                        "rsr-rsmarl | rsr-marl | nocomm | nonrobust | marl-dr | custom")
            ->envname("CAVSIM_METHOD");
        cmd->add_option("--seed", opts.seed, "master seed")->envname("CAVSIM_SEED");
        cmd->add_option("--episodes", opts.episodes, "episode count override")
            ->envname("CAVSIM_EPISODES");
        cmd->add_option("--out", opts.out_dir, "output directory")
            ->envname("CAVSIM_OUT");
        cmd->add_option("--threads", opts.threads, "worker threads (0 = auto)")
            ->envname("CAVSIM_THREADS");
    };

    CLI::App* train = app.add_subcommand("train", "train policies and write a checkpoint");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", opts.checkpoint_path, "checkpoint file")
        ->required()
        ->envname("CAVSIM_CHECKPOINT");
    eval->add_flag("--channel-trace", opts.channel_trace,
                   "dump episode-0 channel events as JSONL");

    CLI::App* scripted =
        app.add_subcommand("scripted", "non-learned baseline through the same stack");
    add_common(scripted);
    scripted->add_option("--policy", opts.policy, "maintain | random")
        ->envname("CAVSIM_POLICY");
    scripted->add_flag("--channel-trace", opts.channel_trace,
                       "dump episode-0 channel events as JSONL");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) return cavsim::run_train(opts);
    if (eval->parsed()) return cavsim::run_eval(opts);
    return cavsim::run_scripted(opts);
}
