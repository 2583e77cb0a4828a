#pragma once

#include <vector>

#include "surgidepth/depth_map.hpp"

namespace surgidepth {

// Per-image depth metrics, averaged unweighted across images by
// evaluate_dataset. n_pixels totals the jointly valid pixels consumed.
struct MetricsReport {
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    double rmse = 0.0;
    double rmse_log = 0.0;
    double delta = 0.0;
    long long n_pixels = 0;
};

// Accuracy threshold for the delta metric: fraction of pixels with
// max(p/g, g/p) below this ratio.
inline constexpr double kDeltaThreshold = 1.25;

// Evaluation cap in millimeters, applied after median scaling.
inline constexpr double kDepthCapMm = 150.0;

// Lower-of-two-middles median (sorted[(n-1)/2]); v must be nonempty.
double median_of(std::vector<double> v);

// Multiplies pred by median(gt)/median(pred), medians taken over the jointly
// valid pixels. The returned map keeps pred's mask.
DepthMap median_scale(const DepthMap& pred, const DepthMap& gt);

// The five metrics over jointly valid pixels. No scaling or capping happens
// here; callers align the maps first.
MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt);

struct EvalPair {
    DepthMap pred;
    DepthMap gt;
};

// Full protocol per image: joint masking, median scaling, capping both maps
// at cap_mm, metrics; reports the unweighted mean over images. Images are
// processed in parallel (SURGIDEPTH_THREADS caps the worker count) with a
// deterministic reduction.
MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs, double cap_mm = kDepthCapMm);

}  // namespace surgidepth
