#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "surgidepth/commands.hpp"

namespace {

void attach_flags(CLI::App* cmd, surgidepth::FlagOverrides& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "Seed for data generation, init, and shuffling");
    cmd->add_option("--rank", flags.rank, "Adapter rank (0 disables adapters)");
    cmd->add_option("--lr", flags.lr, "Learning rate");
    cmd->add_option("--epochs", flags.epochs, "Training epochs");
    cmd->add_option("--out", flags.out_dir, "Output directory");
    cmd->add_option("--pred", flags.pred_dir, "Predicted-depth directory");
    cmd->add_option("--gt", flags.gt_dir, "Ground-truth depth directory");
    cmd->add_option("--model", flags.model_path, "Checkpoint manifest path");
    cmd->add_option("--data", flags.data_dir, "Input data directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth estimation with a frozen transformer encoder and low-rank adapters"};
    app.require_subcommand(1);

    surgidepth::FlagOverrides flags;
    const std::vector<std::string> commands = {"gen-data", "train", "infer", "eval", "sweep-rank"};
    for (const std::string& name : commands) {
        attach_flags(app.add_subcommand(name), flags);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    return surgidepth::run_command(app.get_subcommands().front()->get_name(), flags);
}
