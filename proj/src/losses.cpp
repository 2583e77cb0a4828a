#include "surgidepth/losses.hpp"

#include <cstddef>
#include <string>
#include <vector>

#include "surgidepth/errors.hpp"

namespace surgidepth {

void LossWeights::validate() const {
    if (lambda1 < 0.0) throw ConfigError("lambda1 must be non-negative");
    if (lambda2 < 0.0 || lambda2 > 1.0) throw ConfigError("lambda2 must lie in [0, 1]");
    if (lambda3 < 0.0) throw ConfigError("lambda3 must be non-negative");
}

namespace {

void check_pair(const Tensor& pred, const DepthMap& gt) {
    gt.check_consistent();
    if (pred.ndim() != 2 || pred.dim(0) != gt.h || pred.dim(1) != gt.w)
        throw ShapeError("prediction must be [" + std::to_string(gt.h) + " x " + std::to_string(gt.w) +
                         "], got " + shape_str(pred.shape()));
    if (gt.valid_count() == 0) throw DataError("ground truth has no valid pixels");
}

// Coarse pixel valid only when all four pooled fine pixels are.
std::vector<std::uint8_t> pool_mask(const std::vector<std::uint8_t>& mask, int h, int w) {
    const int oh = h / 2;
    const int ow = w / 2;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            const std::size_t base = static_cast<std::size_t>(2 * r) * w + 2 * c;
            out[static_cast<std::size_t>(r) * ow + c] =
                (mask[base] && mask[base + 1] && mask[base + w] && mask[base + w + 1]) ? 1 : 0;
        }
    return out;
}

}  // namespace

Tensor pixel_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w) {
    w.validate();
    check_pair(pred, gt);
    const double n = gt.valid_count();
    Tensor g = ops::masked_log_ratio(pred, gt.to_tensor(), gt.mask);
    Tensor mean_sq = ops::scale(ops::sum(ops::mul(g, g)), 1.0 / n);
    Tensor mean = ops::scale(ops::sum(g), 1.0 / n);
    Tensor radicand = ops::sub(mean_sq, ops::scale(ops::mul(mean, mean), w.lambda2));
    return ops::scale(ops::sqrt_clamped(radicand), w.lambda1);
}

Tensor grad_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w, int scales) {
    w.validate();
    check_pair(pred, gt);
    if (scales < 1) throw ConfigError("scale count must be at least 1, got " + std::to_string(scales));
    const double n = gt.valid_count();

    Tensor g = ops::masked_log_ratio(pred, gt.to_tensor(), gt.mask);
    std::vector<std::uint8_t> mask = gt.mask;
    Tensor acc = ops::masked_tv(g, mask);
    int h = gt.h;
    int w_ = gt.w;
    for (int k = 1; k < scales; ++k) {
        if (h < 2 || w_ < 2) break;  // nothing left to pool
        g = ops::avgpool2x2(g);
        mask = pool_mask(mask, h, w_);
        h /= 2;
        w_ /= 2;
        acc = ops::add(acc, ops::masked_tv(g, mask));
    }
    return ops::scale(acc, w.lambda3 / n);
}

Tensor total_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w, int scales) {
    return ops::add(pixel_loss(pred, gt, w), grad_loss(pred, gt, w, scales));
}

double pixel_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w) {
    NoGradGuard ng;
    return pixel_loss(pred.to_tensor(), gt, w).item();
}

double grad_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w, int scales) {
    NoGradGuard ng;
    return grad_loss(pred.to_tensor(), gt, w, scales).item();
}

double total_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w, int scales) {
    NoGradGuard ng;
    return total_loss(pred.to_tensor(), gt, w, scales).item();
}

}  // namespace surgidepth
