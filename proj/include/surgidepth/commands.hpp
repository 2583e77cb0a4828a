#pragma once

#include <string>

#include "surgidepth/runconfig.hpp"

namespace surgidepth {

// gen-data: write n_samples seeded synthetic samples into out_dir as
// image_NNNN.ppm plus depth_NNNN.pfm and depth_NNNN.pgm.
void cmd_gen_data(const RunConfig& cfg);

// train: load image/depth pairs from data_dir, fit the adapters and head,
// write out_dir/model.json, out_dir/model.bin, out_dir/train_log.csv.
void cmd_train(const RunConfig& cfg);

// infer: run the checkpoint at model_path over every PPM in data_dir and
// write pred_*.pfm, pred_*.pgm, and vis_*.pgm into out_dir.
void cmd_infer(const RunConfig& cfg);

// eval: pair the PFMs of pred_dir and gt_dir by sorted order, run the
// median-scaled protocol, write out_dir/metrics.csv and echo the row.
void cmd_eval(const RunConfig& cfg);

// sweep-rank: train ranks {1, 4, 8, 16} on data_dir and write
// out_dir/sweep.csv with per-rank trainable counts and metrics.
void cmd_sweep_rank(const RunConfig& cfg);

// Parses flags, dispatches the command, and maps failures to the exit-code
// contract: 0 success, 1 runtime or data error, 2 usage error.
int run_command(const std::string& command, const FlagOverrides& flags);

}  // namespace surgidepth
