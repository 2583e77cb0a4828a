#pragma once

#include <cstdint>
#include <vector>

#include "surgidepth/decoder.hpp"
#include "surgidepth/depth_map.hpp"
#include "surgidepth/lora.hpp"
#include "surgidepth/tensor.hpp"
#include "surgidepth/vit.hpp"

namespace surgidepth {

// Frozen encoder, optional q/v adapters, and the trainable bin-classifier
// head. rank 0 means no adapters are attached.
struct DepthModel {
    EncoderConfig cfg;
    BinConfig bins;
    int rank = 0;
    EncoderWeights encoder;
    std::vector<QvLora> adapters;
    DecoderHead head;

    // Image [H x W x C] -> depth tensor [H x W] in millimeters, on the
    // gradient path of the adapters and head.
    Tensor forward(const Tensor& image) const;
    // Inference: no graph recording, full-valid mask.
    DepthMap predict(const Tensor& image) const;
};

DepthModel make_model(const EncoderConfig& cfg, const BinConfig& bins, int rank, std::uint64_t seed);

// Pure arithmetic; nothing is allocated. Counts every weight the model would
// hold: encoder + head + adapters (rank may be 0).
long long count_model_params(const EncoderConfig& cfg, int n_bins, int rank);

// Trainable subset: adapters plus head.
long long count_trainable_params(const EncoderConfig& cfg, int n_bins, int rank);

}  // namespace surgidepth
