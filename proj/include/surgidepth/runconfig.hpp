#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "surgidepth/decoder.hpp"
#include "surgidepth/trainer.hpp"
#include "surgidepth/vit.hpp"

namespace surgidepth {

// Values supplied on the command line; set fields win over the config file.
struct FlagOverrides {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> rank;
    std::optional<double> lr;
    std::optional<int> epochs;
    std::optional<std::string> out_dir;
    std::optional<std::string> pred_dir;
    std::optional<std::string> gt_dir;
    std::optional<std::string> model_path;
    std::optional<std::string> data_dir;
};

// Fully resolved parameters for one command run. Defaults are the training
// recipe the stack was built around: lr 1e-5, weight decay 1e-4, batch 8,
// 50 epochs, loss weights (1.0, 0.85, 0.5), adapter rank 4.
struct RunConfig {
    EncoderConfig encoder = EncoderConfig::toy();
    BinConfig bins;
    TrainConfig train;
    int rank = 4;
    int n_samples = 16;
    int gen_h = 0;  // 0 means "match the encoder input size"
    int gen_w = 0;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string pred_dir;
    std::string gt_dir;
    std::string model_path;
    std::string data_dir;

    void validate() const;
};

// Reads the JSON config file named by the flags (when given), applies flag
// overrides on top, resolves derived defaults, and validates everything.
// Unknown keys, type mismatches, and constraint violations all raise
// UsageError naming the offender; nothing is written before this passes.
RunConfig parse_run_config(const FlagOverrides& flags);

}  // namespace surgidepth
