#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ferm/grad/tensor.hpp"

namespace ferm::grad {

template <typename T>
struct AdamConfig {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// One Adam update for a single tensor. t is the 1-based count of updates
// applied to this tensor (bias correction uses it directly).
template <typename T>
void adam_step(Tensor<T>& p, std::vector<T>& m, std::vector<T>& v, int64_t t,
               const AdamConfig<T>& c) {
  auto& impl = *p.impl();
  if (impl.grad.empty()) return;
  if (m.size() != impl.data.size()) m.assign(impl.data.size(), T(0));
  if (v.size() != impl.data.size()) v.assign(impl.data.size(), T(0));
  T bc1 = T(1) - std::pow(c.beta1, static_cast<T>(t));
  T bc2 = T(1) - std::pow(c.beta2, static_cast<T>(t));
  int64_t n = static_cast<int64_t>(impl.data.size());
  for (int64_t i = 0; i < n; ++i) {
    T g = impl.grad[static_cast<size_t>(i)];
    m[static_cast<size_t>(i)] = c.beta1 * m[static_cast<size_t>(i)] + (T(1) - c.beta1) * g;
    v[static_cast<size_t>(i)] = c.beta2 * v[static_cast<size_t>(i)] + (T(1) - c.beta2) * g * g;
    T mhat = m[static_cast<size_t>(i)] / bc1;
    T vhat = v[static_cast<size_t>(i)] / bc2;
    impl.data[static_cast<size_t>(i)] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

// Adam over a fixed set of parameters. Parameters whose gradient was never
// produced in the current step are skipped entirely (their moment state and
// step count do not advance).
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamConfig<T> cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    t_.assign(params_.size(), 0);
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      ++t_[i];
      adam_step(params_[i], m_[i], v_[i], t_[i], cfg_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const AdamConfig<T>& config() const { return cfg_; }
  std::vector<Tensor<T>>& params() { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  std::vector<int64_t> t_;
  AdamConfig<T> cfg_;
};

// dst <- (1 - tau) * dst + tau * src, elementwise over matching tensors.
template <typename T>
void ema_update(Tensor<T>& dst, const Tensor<T>& src, T tau) {
  if (dst.shape() != src.shape())
    raise(ErrorKind::shape_mismatch, "ema_update: shapes differ");
  T* pd = dst.ptr();
  const T* ps = src.ptr();
  int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) pd[i] = (T(1) - tau) * pd[i] + tau * ps[i];
}

template <typename T>
void ema_update(std::vector<Tensor<T>>& dst, const std::vector<Tensor<T>>& src, T tau) {
  if (dst.size() != src.size())
    raise(ErrorKind::shape_mismatch, "ema_update: parameter lists differ");
  for (size_t i = 0; i < dst.size(); ++i) ema_update(dst[i], src[i], tau);
}

}  // namespace ferm::grad
