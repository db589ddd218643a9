#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ferm/grad/tensor.hpp"

namespace ferm::nets {

using NamedTensors = std::vector<std::pair<std::string, grad::Tensor<float>>>;

// Versioned little-endian binary: magic "FERMNETS", u32 version, u32 count,
// then per tensor (name, shape, raw f32 data). Round-trips bit-exactly.
void save_tensors(const std::string& path, const NamedTensors& tensors);

// Load all tensors from a checkpoint.
NamedTensors load_tensors(const std::string& path);

// Load into existing tensors by name (tensor handles share storage, so the
// caller's nets see the loaded values); every destination name must be
// present with a matching shape.
void load_into(const std::string& path, NamedTensors dst);

}  // namespace ferm::nets
