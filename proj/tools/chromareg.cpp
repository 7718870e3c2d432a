#include "chromareg/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace {

chromareg::RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    chromareg::RunConfig config = path.empty() ? chromareg::RunConfig{} : chromareg::load_config(path);
    if (seed) chromareg::apply_seed_override(config, *seed);
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Image to colored point cloud registration"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(chromareg::kCodeVersion));

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data_dir;
    std::string checkpoint;
    std::string resume;
    std::string pair_id;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "Overrides every seed in the configuration");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic pairs (or ingest an RGB-D directory)");
    add_common(gen);
    gen->add_option("--out", out, "Output data directory")->required();

    CLI::App* train = app.add_subcommand("train", "Train on a generated data directory");
    add_common(train);
    train->add_option("--data", data_dir, "Data directory with manifest.json")->required();
    train->add_option("--out", out, "Output directory for checkpoints and the training log")->required();
    train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a metrics report");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_dir, "Data directory with manifest.json")->required();
    eval->add_option("--out", out, "Report path (JSON)")->required();

    CLI::App* viz = app.add_subcommand("viz", "Draw predicted matches of one pair");
    add_common(viz);
    viz->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    viz->add_option("--data", data_dir, "Data directory with manifest.json")->required();
    viz->add_option("--pair", pair_id, "Pair id from the manifest")->required();
    viz->add_option("--out", out, "Output PNG")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const auto m = chromareg::cmd_gen_data(resolve_config(config_path, seed), out);
            std::cout << "accepted " << m.accepted << " rejected " << m.rejected << " -> " << out << "\n";
        } else if (train->parsed()) {
            chromareg::TrainOptions options{data_dir, out, resume, &std::cout};
            const auto s = chromareg::cmd_train(resolve_config(config_path, seed), options);
            std::cout << "loss " << s.initial_loss << " -> " << s.final_loss << " in " << s.seconds << " s, wrote "
                      << s.checkpoint << "\n";
        } else if (eval->parsed()) {
            std::optional<chromareg::RunConfig> config;
            if (!config_path.empty() || seed) {
                if (config_path.empty()) {
                    config = chromareg::load_checkpoint(checkpoint).config;
                    chromareg::apply_seed_override(*config, *seed);
                } else {
                    config = resolve_config(config_path, seed);
                }
            }
            const auto r = chromareg::cmd_eval(checkpoint, data_dir, out, config);
            const auto& o = r.aggregate.overall;
            std::cout << "pairs " << o.n_pairs << " IR " << o.ir << " FMR " << o.fmr << " RR " << o.rr << " RTE " << o.rte
                      << " RRE " << o.rre << " -> " << out << "\n";
        } else if (viz->parsed()) {
            const auto v = chromareg::cmd_viz(checkpoint, data_dir, pair_id, out);
            std::cout << v.footer << " -> " << out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
