#include "surgidepth/decoder.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "surgidepth/errors.hpp"
#include "surgidepth/rng.hpp"

namespace surgidepth {

void BinConfig::validate() const {
    if (n_bins < 1) throw ConfigError("n_bins must be at least 1, got " + std::to_string(n_bins));
    if (!(d_max > d_min)) throw ConfigError("depth range must satisfy d_max > d_min");
}

std::vector<double> BinConfig::centers() const {
    validate();
    std::vector<double> c(n_bins);
    const double width = (d_max - d_min) / n_bins;
    for (int b = 0; b < n_bins; ++b) c[b] = d_min + (b + 0.5) * width;
    return c;
}

DecoderHead init_head(int channels, int n_bins, std::uint64_t seed) {
    if (channels < 1 || n_bins < 1) throw ConfigError("decoder head dims must be positive");
    Rng rng(seed);
    std::vector<double> w(static_cast<std::size_t>(n_bins) * channels);
    for (double& v : w) v = rng.normal() * (1.0 / std::sqrt(static_cast<double>(channels)));
    DecoderHead head;
    head.weight = Tensor::param({n_bins, channels}, std::move(w));
    head.bias = Tensor::param({n_bins}, std::vector<double>(n_bins, 0.0));
    return head;
}

long long head_param_count(int channels, int n_bins) {
    return static_cast<long long>(n_bins) * channels + n_bins;
}

Tensor assemble_feature_grid(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg) {
    cfg.validate();
    const int gh = cfg.grid_h();
    const int gw = cfg.grid_w();
    const int n = cfg.num_patches();
    std::vector<Tensor> planes;
    planes.reserve(cfg.extract_layers.size());
    for (int layer : cfg.extract_layers) {
        if (layer > static_cast<int>(layer_outputs.size()))
            throw ConfigError("extract layer " + std::to_string(layer) + " not among the " +
                              std::to_string(layer_outputs.size()) + " encoder outputs");
        const Tensor& tokens = layer_outputs[layer - 1];
        if (tokens.ndim() != 2 || tokens.dim(0) != n + 1 || tokens.dim(1) != cfg.dim)
            throw ShapeError("layer output must be [" + std::to_string(n + 1) + " x " +
                             std::to_string(cfg.dim) + "], got " + shape_str(tokens.shape()));
        Tensor patches = ops::slice_rows(tokens, 1, n);  // class token dropped
        Tensor grid = ops::reshape(patches, {gh, gw, cfg.dim});
        planes.push_back(ops::bilinear_resize(grid, 4 * gh, 4 * gw));
    }
    return planes.size() == 1 ? planes[0] : ops::concat_channels(planes);
}

Tensor bin_logits(const Tensor& grid, const DecoderHead& head) {
    if (grid.ndim() != 3) throw ShapeError("feature grid must be [h x w x C], got " + shape_str(grid.shape()));
    const int h = grid.dim(0);
    const int w = grid.dim(1);
    const int c = grid.dim(2);
    if (head.weight.ndim() != 2 || head.weight.dim(1) != c)
        throw ShapeError("head expects " + std::to_string(head.weight.dim(1)) + " channels, grid has " +
                         std::to_string(c));
    const int n_bins = head.weight.dim(0);
    Tensor flat = ops::reshape(grid, {h * w, c});
    Tensor logits = ops::add_rowvec(ops::matmul(flat, ops::transpose(head.weight)), head.bias);
    return ops::reshape(logits, {h, w, n_bins});
}

Tensor bins_to_depth(const Tensor& logits, const BinConfig& bins) {
    bins.validate();
    if (logits.ndim() != 3 || logits.dim(2) != bins.n_bins)
        throw ShapeError("logits must be [h x w x " + std::to_string(bins.n_bins) + "], got " +
                         shape_str(logits.shape()));
    const int h = logits.dim(0);
    const int w = logits.dim(1);
    Tensor probs = ops::softmax_rows(ops::reshape(logits, {h * w, bins.n_bins}));
    Tensor centers = Tensor::from_data({bins.n_bins, 1}, bins.centers());
    return ops::reshape(ops::matmul(probs, centers), {h, w});
}

Tensor decode_tensor(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg,
                     const DecoderHead& head, const BinConfig& bins, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ConfigError("output size must be at least 1x1");
    Tensor grid = assemble_feature_grid(layer_outputs, cfg);
    Tensor depth = bins_to_depth(bin_logits(grid, head), bins);
    const int h = depth.dim(0);
    const int w = depth.dim(1);
    if (out_h == h && out_w == w) return depth;
    Tensor resized = ops::bilinear_resize(ops::reshape(depth, {h, w, 1}), out_h, out_w);
    return ops::reshape(resized, {out_h, out_w});
}

DepthMap decode(const std::vector<Tensor>& layer_outputs, const EncoderConfig& cfg, const DecoderHead& head,
                const BinConfig& bins, int out_h, int out_w) {
    NoGradGuard ng;
    return DepthMap::from_tensor(decode_tensor(layer_outputs, cfg, head, bins, out_h, out_w));
}

}  // namespace surgidepth
