#pragma once

#include "surgidepth/depth_map.hpp"
#include "surgidepth/tensor.hpp"

namespace surgidepth {

// One training or evaluation example: image tensor [H x W x C] with values
// in [0, 1], and the ground-truth depth in millimeters.
struct Sample {
    Tensor image;
    DepthMap gt;
};

}  // namespace surgidepth
