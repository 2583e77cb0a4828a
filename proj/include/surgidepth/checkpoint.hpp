#pragma once

#include <string>

#include "surgidepth/model.hpp"

namespace surgidepth {

// Checkpoint = JSON manifest + raw payload of little-endian 64-bit floats.
// The manifest records the model configuration and one descriptor per
// tensor (name, shape, role frozen|trainable, offset and count in values).
// The payload file is referenced by basename, so both files must live in
// the same directory. Round-trips are bitwise.
void save_checkpoint(const DepthModel& model, const std::string& manifest_path,
                     const std::string& payload_path);
DepthModel load_checkpoint(const std::string& manifest_path);

}  // namespace surgidepth
