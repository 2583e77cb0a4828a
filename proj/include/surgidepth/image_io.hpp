#pragma once

#include <string>

#include "surgidepth/depth_map.hpp"
#include "surgidepth/sample.hpp"
#include "surgidepth/tensor.hpp"

namespace surgidepth {

// Millimeters represented by one stored unit in 16-bit depth PGMs; the
// default spans (0, 655.35] mm.
inline constexpr double kDefaultPgmScale = 0.01;

// 8-bit binary PPM (P6). The tensor is [H x W x C] with C=3 and values in
// [0, 1]; bytes are round(v * 255).
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) with a header
// comment "# scale_mm_per_unit=<v>". Stored value = round(mm / scale);
// invalid pixels are stored as 0 and reconstructed as masked-invalid.
void write_pgm16(const std::string& path, const DepthMap& depth,
                 double scale_mm_per_unit = kDefaultPgmScale);
DepthMap read_pgm16(const std::string& path, double* scale_mm_per_unit = nullptr);

// Grayscale PFM ("Pf"), 32-bit floats, bottom-up rows. The scale line's
// sign encodes endianness; the writer emits -1.0 (little-endian). Invalid
// pixels are stored as 0.0.
void write_pfm(const std::string& path, const DepthMap& depth);
DepthMap read_pfm(const std::string& path);

// 8-bit PGM preview: valid depths normalized per image to [0, 255],
// invalid pixels black. A constant map renders mid-gray.
void write_pgm8_visualization(const std::string& path, const DepthMap& depth);

// Reads an image/depth pair and resizes it to the model resolution: the
// image bilinearly, the depth with nearest-neighbor so masks and values
// never blend. The depth format is picked by extension (.pfm or .pgm).
Sample load_sample(const std::string& image_path, const std::string& depth_path, int model_h,
                   int model_w);

}  // namespace surgidepth
