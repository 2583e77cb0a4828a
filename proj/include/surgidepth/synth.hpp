#pragma once

#include <cstdint>

#include "surgidepth/sample.hpp"

namespace surgidepth {

// Generates a desk-scale scene: a smooth depth surface built from 3..8
// seeded Gaussian bumps, min-max mapped into [20, 150] mm, with an RGB
// image produced by Lambertian shading of that surface under a seeded
// light direction and a seeded sinusoidal albedo. The mask is fully
// valid and the same seed reproduces the sample bit for bit.
Sample synth_scene(std::uint64_t seed, int h, int w);

}  // namespace surgidepth
