#pragma once

#include <string>
#include <vector>

#include "ferm/grad/ops.hpp"
#include "ferm/grad/tensor.hpp"
#include "ferm/nets/checkpoint.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::nets {

using grad::Tensor;

inline constexpr int kLatentDim = 50;

// Pixel encoder: 4 conv layers (32 filters, 3x3, strides 2/1/1/1), flatten,
// dense to 50, layer normalization, tanh. Input is [N, C, img, img] in [0,1];
// output latents are in (-1, 1).
struct Encoder {
  int in_c = 0;
  int img = 0;
  Tensor<float> k1, b1, k2, b2, k3, b3, k4, b4;
  Tensor<float> w, b;
  Tensor<float> ln_g, ln_b;

  static Encoder init(int in_c, int img, Rng& rng);
  static int flat_dim(int img);

  Tensor<float> forward(const Tensor<float>& x) const;
  std::vector<Tensor<float>> params();
  NamedTensors named(const std::string& prefix);
  Encoder clone() const;
  void set_requires_grad(bool on);
};

// Actor head: latent -> 1024 -> 1024 -> (mu, log_sigma) per action dim, with
// log_sigma clamped to [-10, 2].
struct Actor {
  int act_dim = 0;
  Tensor<float> w1, b1, w2, b2, w3, b3;

  static Actor init(int act_dim, Rng& rng);
  // Returns {mu [N,A], log_sigma [N,A]}.
  std::pair<Tensor<float>, Tensor<float>> forward(const Tensor<float>& latent) const;
  std::vector<Tensor<float>> params();
  NamedTensors named(const std::string& prefix);
  void set_requires_grad(bool on);
};

// Twin critics: (latent ++ action) -> 1024 -> 1024 -> 1, two independent
// parameter sets.
struct Critic {
  int act_dim = 0;
  Tensor<float> a_w1, a_b1, a_w2, a_b2, a_w3, a_b3;
  Tensor<float> c_w1, c_b1, c_w2, c_b2, c_w3, c_b3;

  static Critic init(int act_dim, Rng& rng);
  // Returns {Q1 [N,1], Q2 [N,1]}. Actions must lie in [-1, 1].
  std::pair<Tensor<float>, Tensor<float>> forward(const Tensor<float>& latent,
                                                  const Tensor<float>& action) const;
  std::vector<Tensor<float>> params();
  NamedTensors named(const std::string& prefix);
  Critic clone() const;
  void set_requires_grad(bool on);
};

}  // namespace ferm::nets
