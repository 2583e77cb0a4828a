#pragma once

#include <cstdint>
#include <vector>

#include "surgidepth/lora.hpp"
#include "surgidepth/tensor.hpp"

namespace surgidepth {

// Geometry and depth of the frozen encoder. The default profile is the small
// one used in tests and toy runs; vit_base() is the full-size deployment
// profile.
struct EncoderConfig {
    int patch = 14;
    int depth = 4;
    int dim = 64;
    int heads = 4;
    int img_h = 56;
    int img_w = 56;
    int channels = 3;
    // 1-based block indices whose outputs feed the decoder, ascending.
    std::vector<int> extract_layers = {1, 2, 3, 4};
    double ln_eps = 1e-6;

    int grid_h() const { return img_h / patch; }
    int grid_w() const { return img_w / patch; }
    int num_patches() const { return grid_h() * grid_w(); }
    int tokens() const { return num_patches() + 1; }
    int head_dim() const { return dim / heads; }
    int patch_len() const { return patch * patch * channels; }

    void validate() const;

    static EncoderConfig toy();
    static EncoderConfig vit_base();
};

// Frozen parameters of one pre-norm transformer block.
struct BlockWeights {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq;  // [D x D], [D]
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1;  // [4D x D], [4D]
    Tensor w2, b2;  // [D x 4D], [D]
};

struct EncoderWeights {
    Tensor patch_w;  // [D x p*p*C]
    Tensor patch_b;  // [D]
    Tensor cls;      // [D], class token
    Tensor pos;      // [(N+1) x D], learned positional table
    std::vector<BlockWeights> blocks;
};

// Fan-in-scaled normal draws for the projections, unit-scale positional
// table, zero biases and LN offsets, unit LN gains. Frozen: none require
// grad.
EncoderWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

// Splits the image [H x W x C] (rows = H, cols = W*C interleaved) into
// non-overlapping patches and linearly projects each to D. Output [N x D] in
// raster order.
Tensor patchify_embed(const Tensor& image, const Tensor& patch_w, const Tensor& patch_b, int patch);

// Prepends the class token (position 0) and adds the positional table.
// patches: [N x D], pos: [(N+1) x D], cls: [D] -> [(N+1) x D].
Tensor add_pos_and_class(const Tensor& patches, const Tensor& pos, const Tensor& cls);

// Per-head attention probabilities for already-projected q/k: each row of
// each returned [T x T] map sums to one. attn_bias, if given, is added to the
// scaled logits of every head.
std::vector<Tensor> attention_probs_per_head(const Tensor& q, const Tensor& k, int heads,
                                             const Tensor* attn_bias);

// One pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)). When `lora` is
// non-null its pairs ride on the q and v projections; k and the MLP are never
// adapted.
Tensor block_forward(const Tensor& tokens, const BlockWeights& w, const EncoderConfig& cfg,
                     const QvLora* lora = nullptr, const Tensor* attn_bias = nullptr);

// Runs every block and returns all intermediate token sequences t^1..t^L
// (index l-1 holds the output of block l). `loras`, when given, must have one
// entry per block.
std::vector<Tensor> encoder_forward(const Tensor& tokens, const std::vector<BlockWeights>& blocks,
                                    const EncoderConfig& cfg, const std::vector<QvLora>* loras = nullptr,
                                    const Tensor* attn_bias = nullptr);

}  // namespace surgidepth
