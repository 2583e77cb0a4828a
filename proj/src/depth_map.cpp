#include "surgidepth/depth_map.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "surgidepth/errors.hpp"

namespace surgidepth {

int DepthMap::valid_count() const {
    int n = 0;
    for (std::uint8_t m : mask) n += m ? 1 : 0;
    return n;
}

void DepthMap::check_consistent() const {
    if (h < 1 || w < 1) throw ShapeError("depth map must be at least 1x1, got " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (values.size() != n || mask.size() != n)
        throw ShapeError("depth map buffers do not match " + std::to_string(h) + "x" + std::to_string(w));
}

DepthMap DepthMap::full_valid(int h, int w, std::vector<double> values) {
    DepthMap m;
    m.h = h;
    m.w = w;
    m.values = std::move(values);
    m.mask.assign(static_cast<std::size_t>(h) * w, 1);
    m.check_consistent();
    return m;
}

DepthMap DepthMap::from_values(int h, int w, std::vector<double> values) {
    DepthMap m;
    m.h = h;
    m.w = w;
    m.values = std::move(values);
    m.mask.resize(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i)
        m.mask[i] = (std::isfinite(m.values[i]) && m.values[i] > 0.0) ? 1 : 0;
    m.check_consistent();
    return m;
}

DepthMap DepthMap::from_tensor(const Tensor& t) {
    if (t.ndim() != 2) throw ShapeError("depth tensor must be [H x W], got " + shape_str(t.shape()));
    return full_valid(t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor DepthMap::to_tensor() const {
    check_consistent();
    return Tensor::from_data({h, w}, values);
}

}  // namespace surgidepth
