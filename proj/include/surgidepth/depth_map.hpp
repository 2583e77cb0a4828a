#pragma once

#include <cstdint>
#include <vector>

#include "surgidepth/tensor.hpp"

namespace surgidepth {

// Dense depth image in millimeters with a per-pixel validity mask. Invalid
// pixels carry no depth information; their stored value is irrelevant.
struct DepthMap {
    int h = 0;
    int w = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;  // 1 = valid

    int valid_count() const;
    void check_consistent() const;

    // All pixels valid.
    static DepthMap full_valid(int h, int w, std::vector<double> values);
    // Valid where the value is finite and strictly positive.
    static DepthMap from_values(int h, int w, std::vector<double> values);
    static DepthMap from_tensor(const Tensor& t);

    Tensor to_tensor() const;
};

}  // namespace surgidepth
