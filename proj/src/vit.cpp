#include "surgidepth/vit.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"

namespace surgidepth {

void EncoderConfig::validate() const {
    if (patch <= 0 || depth <= 0 || dim <= 0 || heads <= 0 || img_h <= 0 || img_w <= 0 || channels <= 0)
        throw ConfigError("encoder dimensions must all be positive");
    if (img_h % patch != 0 || img_w % patch != 0)
        throw ConfigError("image " + std::to_string(img_h) + "x" + std::to_string(img_w) +
                          " is not divisible by patch size " + std::to_string(patch));
    if (dim % heads != 0)
        throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
    if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
    if (extract_layers.empty()) throw ConfigError("extract_layers must name at least one block");
    int prev = 0;
    for (int layer : extract_layers) {
        if (layer < 1 || layer > depth)
            throw ConfigError("extract layer " + std::to_string(layer) + " outside 1.." + std::to_string(depth));
        if (layer <= prev) throw ConfigError("extract_layers must be strictly ascending");
        prev = layer;
    }
}

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::vit_base() {
    EncoderConfig cfg;
    cfg.patch = 14;
    cfg.depth = 12;
    cfg.dim = 768;
    cfg.heads = 12;
    cfg.img_h = 224;
    cfg.img_w = 224;
    cfg.channels = 3;
    cfg.extract_layers = {3, 6, 9, 12};
    return cfg;
}

namespace {

Tensor frozen_normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    for (double& v : values) v = rng.normal() * stddev;
    return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace

EncoderWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.dim;
    // Fan-in-scaled draws: the encoder stays frozen, so its job is to act
    // as a bank of well-conditioned random features with O(1) token values
    // rather than to be fine-tuned away from a tiny init.
    const double patch_std = 1.0 / std::sqrt(static_cast<double>(cfg.patch_len()));
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double mlp_std = 1.0 / std::sqrt(static_cast<double>(4 * d));

    EncoderWeights w;
    w.patch_w = frozen_normal({d, cfg.patch_len()}, rng, patch_std);
    w.patch_b = Tensor::zeros({d});
    w.cls = frozen_normal({d}, rng, 0.02);
    w.pos = frozen_normal({cfg.tokens(), d}, rng, 1.0);

    w.blocks.reserve(cfg.depth);
    for (int l = 0; l < cfg.depth; ++l) {
        BlockWeights b;
        b.ln1_gain = Tensor::full({d}, 1.0);
        b.ln1_bias = Tensor::zeros({d});
        b.wq = frozen_normal({d, d}, rng, proj_std);
        b.bq = Tensor::zeros({d});
        b.wk = frozen_normal({d, d}, rng, proj_std);
        b.bk = Tensor::zeros({d});
        b.wv = frozen_normal({d, d}, rng, proj_std);
        b.bv = Tensor::zeros({d});
        b.wo = frozen_normal({d, d}, rng, proj_std);
        b.bo = Tensor::zeros({d});
        b.ln2_gain = Tensor::full({d}, 1.0);
        b.ln2_bias = Tensor::zeros({d});
        b.w1 = frozen_normal({4 * d, d}, rng, proj_std);
        b.b1 = Tensor::zeros({4 * d});
        b.w2 = frozen_normal({d, 4 * d}, rng, mlp_std);
        b.b2 = Tensor::zeros({d});
        w.blocks.push_back(std::move(b));
    }
    return w;
}

Tensor patchify_embed(const Tensor& image, const Tensor& patch_w, const Tensor& patch_b, int patch) {
    Tensor flat = ops::extract_patches(image, patch);  // [N x p*p*C]
    if (patch_w.ndim() != 2 || patch_w.dim(1) != flat.dim(1))
        throw ShapeError("patch projection expects [D x " + std::to_string(flat.dim(1)) + "], got " +
                         shape_str(patch_w.shape()));
    return ops::add_rowvec(ops::matmul(flat, ops::transpose(patch_w)), patch_b);
}

Tensor add_pos_and_class(const Tensor& patches, const Tensor& pos, const Tensor& cls) {
    if (patches.ndim() != 2) throw ShapeError("patch tokens must be [N x D], got " + shape_str(patches.shape()));
    const int n = patches.dim(0);
    const int d = patches.dim(1);
    if (cls.ndim() != 1 || cls.dim(0) != d)
        throw ShapeError("class token must be [" + std::to_string(d) + "], got " + shape_str(cls.shape()));
    if (pos.ndim() != 2 || pos.dim(0) != n + 1 || pos.dim(1) != d)
        throw ShapeError("positional table must be [" + std::to_string(n + 1) + " x " + std::to_string(d) +
                         "], got " + shape_str(pos.shape()));
    Tensor seq = ops::concat_rows({ops::reshape(cls, {1, d}), patches});
    return ops::add(seq, pos);
}

std::vector<Tensor> attention_probs_per_head(const Tensor& q, const Tensor& k, int heads,
                                             const Tensor* attn_bias) {
    if (q.ndim() != 2 || k.ndim() != 2 || q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1))
        throw ShapeError("q and k must share shape [T x D], got " + shape_str(q.shape()) + " and " +
                         shape_str(k.shape()));
    const int t = q.dim(0);
    const int d = q.dim(1);
    if (heads < 1 || d % heads != 0)
        throw ConfigError("dim " + std::to_string(d) + " is not divisible by heads " + std::to_string(heads));
    if (attn_bias && (attn_bias->ndim() != 2 || attn_bias->dim(0) != t || attn_bias->dim(1) != t))
        throw ShapeError("attention bias must be [T x T], got " + shape_str(attn_bias->shape()));
    const int dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> probs;
    probs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * dh, dh);
        Tensor kh = ops::slice_cols(k, h * dh, dh);
        Tensor logits = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_dh);
        if (attn_bias) logits = ops::add(logits, *attn_bias);
        probs.push_back(ops::softmax_rows(logits));
    }
    return probs;
}

Tensor block_forward(const Tensor& tokens, const BlockWeights& w, const EncoderConfig& cfg,
                     const QvLora* lora, const Tensor* attn_bias) {
    if (tokens.ndim() != 2 || tokens.dim(1) != cfg.dim)
        throw ShapeError("block input must be [T x " + std::to_string(cfg.dim) + "], got " +
                         shape_str(tokens.shape()));

    Tensor x = ops::layer_norm(tokens, w.ln1_gain, w.ln1_bias, cfg.ln_eps);
    Tensor q = project_with_lora(x, w.wq, w.bq, lora ? &lora->q : nullptr);
    Tensor k = project_with_lora(x, w.wk, w.bk, nullptr);
    Tensor v = project_with_lora(x, w.wv, w.bv, lora ? &lora->v : nullptr);

    std::vector<Tensor> probs = attention_probs_per_head(q, k, cfg.heads, attn_bias);
    const int dh = cfg.head_dim();
    std::vector<Tensor> per_head;
    per_head.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h)
        per_head.push_back(ops::matmul(probs[h], ops::slice_cols(v, h * dh, dh)));
    Tensor attn = ops::concat_cols(per_head);
    attn = ops::add_rowvec(ops::matmul(attn, ops::transpose(w.wo)), w.bo);

    Tensor mid = ops::add(tokens, attn);
    Tensor y = ops::layer_norm(mid, w.ln2_gain, w.ln2_bias, cfg.ln_eps);
    y = ops::add_rowvec(ops::matmul(y, ops::transpose(w.w1)), w.b1);
    y = ops::gelu(y);
    y = ops::add_rowvec(ops::matmul(y, ops::transpose(w.w2)), w.b2);
    return ops::add(mid, y);
}

std::vector<Tensor> encoder_forward(const Tensor& tokens, const std::vector<BlockWeights>& blocks,
                                    const EncoderConfig& cfg, const std::vector<QvLora>* loras,
                                    const Tensor* attn_bias) {
    if (static_cast<int>(blocks.size()) != cfg.depth)
        throw ConfigError("expected " + std::to_string(cfg.depth) + " blocks, got " +
                          std::to_string(blocks.size()));
    if (loras && loras->size() != blocks.size())
        throw ConfigError("adapter list must match block count " + std::to_string(blocks.size()) + ", got " +
                          std::to_string(loras->size()));
    std::vector<Tensor> outputs;
    outputs.reserve(blocks.size());
    Tensor x = tokens;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        x = block_forward(x, blocks[l], cfg, loras ? &(*loras)[l] : nullptr, attn_bias);
        outputs.push_back(x);
    }
    return outputs;
}

}  // namespace surgidepth
