#pragma once

#include <vector>

#include "ferm/grad/tensor.hpp"

namespace ferm::grad {

enum class Act { none, relu };

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }
// y = x * s where s has a single element (broadcast scalar tensor).
template <typename T> Tensor<T> mul_scalar_t(const Tensor<T>& x, const Tensor<T>& s);
template <typename T> Tensor<T> exp_elem(const Tensor<T>& a);
template <typename T> Tensor<T> tanh_act(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// log(1 + exp(x)), numerically stable for large |x|.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
// Gradient passes through only where lo <= x <= hi.
template <typename T> Tensor<T> clamp_elem(const Tensor<T>& a, T lo, T hi);
// Elementwise min; on ties the gradient goes to a.
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);

// ---- shape ----
template <typename T> Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape);
template <typename T> Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1);

// ---- reductions ----
template <typename T> Tensor<T> row_sum(const Tensor<T>& a);   // [B,D] -> [B,1]
template <typename T> Tensor<T> sum_all(const Tensor<T>& a);   // -> [1]
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);  // -> [1]

// ---- normalization ----
// Per-row layer norm over the last dim of a [B,D] tensor, with learned gain
// and bias (both [D]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

// ---- classification loss ----
// Mean cross-entropy of softmax(logits) rows against integer labels.
// If probs_out is non-null it receives the detached softmax probabilities.
template <typename T>
Tensor<T> softmax_xent_mean(const Tensor<T>& logits, const std::vector<int>& labels,
                            Tensor<T>* probs_out = nullptr);

// ---- matrix products ----
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a [m,k] x b[n,k]^T -> [m,n]
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// ---- fused layers ----
// x [B,in] * w [in,out] + b [out], optional activation. bias may be an
// undefined tensor for no bias.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                        Act act);

// x [N,C,H,W] (valid padding) * k [O,C,kh,kw] + bias [O], stride 1 or 2,
// optional fused activation. bias may be undefined.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                       int stride, Act act);

}  // namespace ferm::grad
