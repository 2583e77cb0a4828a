#pragma once

#include <cstdint>
#include <vector>

#include "surgidepth/depth_map.hpp"
#include "surgidepth/tensor.hpp"
#include "surgidepth/vit.hpp"

namespace surgidepth {

// Uniform depth-bin layout over [d_min, d_max] millimeters.
struct BinConfig {
    int n_bins = 256;
    double d_min = 0.0;
    double d_max = 150.0;

    void validate() const;
    // c_b = d_min + (b + 0.5) * (d_max - d_min) / n_bins, strictly increasing.
    std::vector<double> centers() const;
};

// Trainable linear classifier from fused features to bin logits.
struct DecoderHead {
    Tensor weight;  // [n_bins x channels]
    Tensor bias;    // [n_bins]
};

DecoderHead init_head(int channels, int n_bins, std::uint64_t seed);
long long head_param_count(int channels, int n_bins);

// Drops each selected layer's class token, unflattens patch tokens to the
// patch grid, upsamples x4 bilinearly, and concatenates along channels in
// extract-layer order. Output [4*grid_h x 4*grid_w x (|extract| * D)].
Tensor assemble_feature_grid(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg);

// Per-pixel affine map to bin logits: [h x w x C] -> [h x w x n_bins].
Tensor bin_logits(const Tensor& grid, const DecoderHead& head);

// Softmax-expectation decoding over bin centers: [h x w x n_bins] -> [h x w].
// Values lie strictly inside (d_min, d_max).
Tensor bins_to_depth(const Tensor& logits, const BinConfig& bins);

// Full decode path, differentiable end to end; resizes to the requested
// output resolution.
Tensor decode_tensor(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg,
                     const DecoderHead& head, const BinConfig& bins, int out_h, int out_w);

// Inference wrapper: same path without graph recording, full-valid mask.
DepthMap decode(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg, const DecoderHead& head,
                const BinConfig& bins, int out_h, int out_w);

}  // namespace surgidepth
