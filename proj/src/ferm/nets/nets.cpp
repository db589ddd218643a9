#include "ferm/nets/nets.hpp"

#include <cmath>

#include "ferm/nets/init.hpp"
#include "ferm/util/error.hpp"

namespace ferm::nets {

using namespace grad;

namespace {
constexpr int kFilters = 32;
constexpr int kHidden = 1024;
constexpr float kLogSigMin = -10.0f;
constexpr float kLogSigMax = 2.0f;

Tensor<float> mlp3(const Tensor<float>& x, const Tensor<float>& w1,
                   const Tensor<float>& b1, const Tensor<float>& w2,
                   const Tensor<float>& b2, const Tensor<float>& w3,
                   const Tensor<float>& b3) {
  auto h1 = dense_forward(x, w1, b1, Act::relu);
  auto h2 = dense_forward(h1, w2, b2, Act::relu);
  return dense_forward(h2, w3, b3, Act::none);
}
}  // namespace

int Encoder::flat_dim(int img) {
  int s = (img - 3) / 2 + 1;
  s -= 2;
  s -= 2;
  s -= 2;
  if (s <= 0) raise(ErrorKind::invalid_argument, "encoder: image too small");
  return kFilters * s * s;
}

Encoder Encoder::init(int in_c, int img, Rng& rng) {
  if (in_c <= 0 || img < 11)
    raise(ErrorKind::invalid_argument, "encoder: bad input geometry");
  Encoder e;
  e.in_c = in_c;
  e.img = img;
  e.k1 = conv_init(kFilters, in_c, 3, 3, rng);
  e.b1 = uniform_fan_in({kFilters}, in_c * 9, rng);
  e.k2 = conv_init(kFilters, kFilters, 3, 3, rng);
  e.b2 = uniform_fan_in({kFilters}, kFilters * 9, rng);
  e.k3 = conv_init(kFilters, kFilters, 3, 3, rng);
  e.b3 = uniform_fan_in({kFilters}, kFilters * 9, rng);
  e.k4 = conv_init(kFilters, kFilters, 3, 3, rng);
  e.b4 = uniform_fan_in({kFilters}, kFilters * 9, rng);
  int flat = flat_dim(img);
  e.w = orthogonal_init(flat, kLatentDim, rng);
  e.b = Tensor<float>::zeros({kLatentDim});
  e.ln_g = Tensor<float>::full({kLatentDim}, 1.0f);
  e.ln_b = Tensor<float>::zeros({kLatentDim});
  return e;
}

Tensor<float> Encoder::forward(const Tensor<float>& x) const {
  if (x.ndim() != 4 || x.dim(1) != in_c || x.dim(2) != img || x.dim(3) != img)
    raise(ErrorKind::shape_mismatch, "encoder: observation spatial size mismatch");
  auto h = conv_forward(x, k1, b1, 2, Act::relu);
  h = conv_forward(h, k2, b2, 1, Act::relu);
  h = conv_forward(h, k3, b3, 1, Act::relu);
  h = conv_forward(h, k4, b4, 1, Act::relu);
  h = reshape(h, {x.dim(0), flat_dim(img)});
  h = dense_forward(h, w, b, Act::none);
  h = layer_norm(h, ln_g, ln_b);
  return tanh_act(h);
}

std::vector<Tensor<float>> Encoder::params() {
  return {k1, b1, k2, b2, k3, b3, k4, b4, w, b, ln_g, ln_b};
}

NamedTensors Encoder::named(const std::string& prefix) {
  return {{prefix + ".conv1.w", k1}, {prefix + ".conv1.b", b1},
          {prefix + ".conv2.w", k2}, {prefix + ".conv2.b", b2},
          {prefix + ".conv3.w", k3}, {prefix + ".conv3.b", b3},
          {prefix + ".conv4.w", k4}, {prefix + ".conv4.b", b4},
          {prefix + ".proj.w", w},   {prefix + ".proj.b", b},
          {prefix + ".ln.g", ln_g},  {prefix + ".ln.b", ln_b}};
}

Encoder Encoder::clone() const {
  Encoder e;
  e.in_c = in_c;
  e.img = img;
  e.k1 = k1.detach();
  e.b1 = b1.detach();
  e.k2 = k2.detach();
  e.b2 = b2.detach();
  e.k3 = k3.detach();
  e.b3 = b3.detach();
  e.k4 = k4.detach();
  e.b4 = b4.detach();
  e.w = w.detach();
  e.b = b.detach();
  e.ln_g = ln_g.detach();
  e.ln_b = ln_b.detach();
  return e;
}

void Encoder::set_requires_grad(bool on) {
  for (auto& p : params()) p.set_requires_grad(on);
}

Actor Actor::init(int act_dim, Rng& rng) {
  if (act_dim <= 0) raise(ErrorKind::invalid_argument, "actor: bad action dim");
  Actor a;
  a.act_dim = act_dim;
  a.w1 = orthogonal_init(kLatentDim, kHidden, rng);
  a.b1 = Tensor<float>::zeros({kHidden});
  a.w2 = orthogonal_init(kHidden, kHidden, rng);
  a.b2 = Tensor<float>::zeros({kHidden});
  a.w3 = orthogonal_init(kHidden, 2 * act_dim, rng);
  a.b3 = Tensor<float>::zeros({2 * act_dim});
  return a;
}

std::pair<Tensor<float>, Tensor<float>> Actor::forward(
    const Tensor<float>& latent) const {
  if (latent.ndim() != 2 || latent.dim(1) != kLatentDim)
    raise(ErrorKind::shape_mismatch, "actor: latent dim mismatch");
  auto out = mlp3(latent, w1, b1, w2, b2, w3, b3);
  auto mu = slice_cols(out, 0, act_dim);
  auto log_sig = clamp_elem(slice_cols(out, act_dim, 2 * act_dim), kLogSigMin,
                            kLogSigMax);
  return {mu, log_sig};
}

std::vector<Tensor<float>> Actor::params() { return {w1, b1, w2, b2, w3, b3}; }

NamedTensors Actor::named(const std::string& prefix) {
  return {{prefix + ".l1.w", w1}, {prefix + ".l1.b", b1},
          {prefix + ".l2.w", w2}, {prefix + ".l2.b", b2},
          {prefix + ".l3.w", w3}, {prefix + ".l3.b", b3}};
}

void Actor::set_requires_grad(bool on) {
  for (auto& p : params()) p.set_requires_grad(on);
}

Critic Critic::init(int act_dim, Rng& rng) {
  if (act_dim <= 0) raise(ErrorKind::invalid_argument, "critic: bad action dim");
  Critic c;
  c.act_dim = act_dim;
  int in = kLatentDim + act_dim;
  c.a_w1 = orthogonal_init(in, kHidden, rng);
  c.a_b1 = Tensor<float>::zeros({kHidden});
  c.a_w2 = orthogonal_init(kHidden, kHidden, rng);
  c.a_b2 = Tensor<float>::zeros({kHidden});
  c.a_w3 = orthogonal_init(kHidden, 1, rng);
  c.a_b3 = Tensor<float>::zeros({1});
  c.c_w1 = orthogonal_init(in, kHidden, rng);
  c.c_b1 = Tensor<float>::zeros({kHidden});
  c.c_w2 = orthogonal_init(kHidden, kHidden, rng);
  c.c_b2 = Tensor<float>::zeros({kHidden});
  c.c_w3 = orthogonal_init(kHidden, 1, rng);
  c.c_b3 = Tensor<float>::zeros({1});
  return c;
}

std::pair<Tensor<float>, Tensor<float>> Critic::forward(
    const Tensor<float>& latent, const Tensor<float>& action) const {
  if (latent.ndim() != 2 || latent.dim(1) != kLatentDim)
    raise(ErrorKind::shape_mismatch, "critic: latent dim mismatch");
  if (action.ndim() != 2 || action.dim(1) != act_dim ||
      action.dim(0) != latent.dim(0))
    raise(ErrorKind::shape_mismatch, "critic: action shape mismatch");
  for (float v : action.data())
    if (!(v >= -1.0f && v <= 1.0f))
      raise(ErrorKind::invalid_argument, "critic: action outside [-1,1]");
  auto x = concat_cols(latent, action);
  auto q1 = mlp3(x, a_w1, a_b1, a_w2, a_b2, a_w3, a_b3);
  auto q2 = mlp3(x, c_w1, c_b1, c_w2, c_b2, c_w3, c_b3);
  return {q1, q2};
}

std::vector<Tensor<float>> Critic::params() {
  return {a_w1, a_b1, a_w2, a_b2, a_w3, a_b3,
          c_w1, c_b1, c_w2, c_b2, c_w3, c_b3};
}

NamedTensors Critic::named(const std::string& prefix) {
  return {{prefix + ".q1.l1.w", a_w1}, {prefix + ".q1.l1.b", a_b1},
          {prefix + ".q1.l2.w", a_w2}, {prefix + ".q1.l2.b", a_b2},
          {prefix + ".q1.l3.w", a_w3}, {prefix + ".q1.l3.b", a_b3},
          {prefix + ".q2.l1.w", c_w1}, {prefix + ".q2.l1.b", c_b1},
          {prefix + ".q2.l2.w", c_w2}, {prefix + ".q2.l2.b", c_b2},
          {prefix + ".q2.l3.w", c_w3}, {prefix + ".q2.l3.b", c_b3}};
}

Critic Critic::clone() const {
  Critic c;
  c.act_dim = act_dim;
  c.a_w1 = a_w1.detach();
  c.a_b1 = a_b1.detach();
  c.a_w2 = a_w2.detach();
  c.a_b2 = a_b2.detach();
  c.a_w3 = a_w3.detach();
  c.a_b3 = a_b3.detach();
  c.c_w1 = c_w1.detach();
  c.c_b1 = c_b1.detach();
  c.c_w2 = c_w2.detach();
  c.c_b2 = c_b2.detach();
  c.c_w3 = c_w3.detach();
  c.c_b3 = c_b3.detach();
  return c;
}

void Critic::set_requires_grad(bool on) {
  for (auto& p : params()) p.set_requires_grad(on);
}

}  // namespace ferm::nets
