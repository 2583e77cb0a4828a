#pragma once

#include "surgidepth/depth_map.hpp"
#include "surgidepth/tensor.hpp"

namespace surgidepth {

// Loss term weights; defaults are the training configuration.
struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 0.85;
    double lambda3 = 0.5;

    void validate() const;  // lambda1 >= 0, lambda2 in [0, 1], lambda3 >= 0
};

// All losses work on the log-depth difference g = log(pred) - log(gt),
// restricted to pixels the ground truth marks valid. pred must be strictly
// positive on those pixels. A ground truth with no valid pixels raises
// DataError.

// lambda1 * sqrt(mean(g^2) - lambda2 * mean(g)^2); the radicand is clamped at
// zero against rounding when g is near constant.
Tensor pixel_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w);

// lambda3 * (1/n) * sum over scales of |forward differences| of g. Scale k+1
// is the 2x2 average-pool of scale k; a coarse pixel is valid only when all
// four pooled pixels are. n counts valid pixels at the finest scale. Scales
// beyond what the map size supports contribute nothing.
Tensor grad_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w, int scales = 4);

// pixel_loss + grad_loss.
Tensor total_loss(const Tensor& pred, const DepthMap& gt, const LossWeights& w, int scales = 4);

// Plain-map conveniences for evaluation paths; no graph is recorded.
double pixel_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w);
double grad_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w, int scales = 4);
double total_loss(const DepthMap& pred, const DepthMap& gt, const LossWeights& w, int scales = 4);

}  // namespace surgidepth
