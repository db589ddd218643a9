#pragma once

#include "ferm/grad/tensor.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::nets {

// Dense weight [out, in]: semi-orthogonal (orthonormal rows when out <= in,
// orthonormal columns otherwise), computed in double via modified
// Gram-Schmidt on Gaussian draws.
grad::Tensor<float> orthogonal_init(int out, int in, Rng& rng);

// Conv weight [O, C, kh, kw] and biases: U(-b, b) with b = 1/sqrt(fan_in).
grad::Tensor<float> conv_init(int out_c, int in_c, int kh, int kw, Rng& rng);
grad::Tensor<float> uniform_fan_in(const std::vector<int>& shape, int fan_in,
                                   Rng& rng);

}  // namespace ferm::nets
