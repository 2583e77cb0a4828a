#include "surgidepth/model.hpp"

#include <string>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"

namespace surgidepth {

Tensor DepthModel::forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != cfg.img_h || image.dim(1) != cfg.img_w ||
        image.dim(2) != cfg.channels)
        throw ShapeError("model expects [" + std::to_string(cfg.img_h) + " x " + std::to_string(cfg.img_w) +
                         " x " + std::to_string(cfg.channels) + "] input, got " + shape_str(image.shape()));
    Tensor tokens = add_pos_and_class(patchify_embed(image, encoder.patch_w, encoder.patch_b, cfg.patch),
                                      encoder.pos, encoder.cls);
    std::vector<Tensor> outs =
        encoder_forward(tokens, encoder.blocks, cfg, adapters.empty() ? nullptr : &adapters);
    return decode_tensor(outs, cfg, head, bins, cfg.img_h, cfg.img_w);
}

DepthMap DepthModel::predict(const Tensor& image) const {
    NoGradGuard ng;
    return DepthMap::from_tensor(forward(image));
}

DepthModel make_model(const EncoderConfig& cfg, const BinConfig& bins, int rank, std::uint64_t seed) {
    cfg.validate();
    bins.validate();
    if (rank < 0) throw ConfigError("adapter rank must be non-negative, got " + std::to_string(rank));

    DepthModel m;
    m.cfg = cfg;
    m.bins = bins;
    m.rank = rank;
    // One seed stream drives the whole init so a (cfg, seed) pair pins every
    // weight; adapters and head get decorrelated sub-seeds.
    Rng master(seed);
    m.encoder = init_encoder(cfg, master.next_u64());
    const std::uint64_t lora_seed = master.next_u64();
    if (rank > 0) m.adapters = inject_qv(m.encoder.blocks, rank, lora_seed, 16.0);
    const int channels = static_cast<int>(cfg.extract_layers.size()) * cfg.dim;
    m.head = init_head(channels, bins.n_bins, master.next_u64());
    return m;
}

long long count_model_params(const EncoderConfig& cfg, int n_bins, int rank) {
    cfg.validate();
    const long long d = cfg.dim;
    const long long patch_embed = d * cfg.patch_len() + d;
    const long long cls = d;
    const long long pos = static_cast<long long>(cfg.tokens()) * d;
    const long long attn = 4 * (d * d + d);
    const long long mlp = (4 * d * d + 4 * d) + (d * 4 * d + d);
    const long long norms = 4 * d;  // two gain/bias pairs
    const long long per_block = attn + mlp + norms;
    const long long head = head_param_count(static_cast<int>(cfg.extract_layers.size()) * cfg.dim, n_bins);
    const long long lora = 4LL * cfg.depth * d * rank;
    return patch_embed + cls + pos + cfg.depth * per_block + head + lora;
}

long long count_trainable_params(const EncoderConfig& cfg, int n_bins, int rank) {
    const long long head = head_param_count(static_cast<int>(cfg.extract_layers.size()) * cfg.dim, n_bins);
    return count_trainable(cfg.depth, cfg.dim, rank, head);
}

}  // namespace surgidepth
