#include "ferm/grad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "ferm/grad/kernels.hpp"

namespace ferm::grad {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    raise(ErrorKind::shape_mismatch, std::string(op) + ": operand shapes differ");
}

template <typename T>
void require_2d(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 2) raise(ErrorKind::shape_mismatch, std::string(op) + ": expected 2-d tensor");
}

template <typename T>
void maybe_record(Tensor<T>& out, bool relevant, std::function<void()> back) {
  Tape<T>* tp = active_tape<T>();
  if (tp && relevant) tp->record(out.impl(), std::move(back));
}

// Unary elementwise helper. fwd: y = f(x). back: gx += dfn(x, y) * gy.
template <typename T, typename F, typename DF>
Tensor<T> unary_elem(const Tensor<T>& a, F f, DF dfn) {
  auto out = Tensor<T>::zeros(a.shape());
  const T* x = a.ptr();
  T* y = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  bool rel = grad_relevant(a);
  auto ai = a.impl();
  auto oi = out.impl();
  maybe_record(out, rel, [ai, oi, dfn]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    const T* x = ai->data.data();
    const T* y = oi->data.data();
    T* gx = grad_buffer(ai);
    int64_t n = static_cast<int64_t>(ai->data.size());
    for (int64_t i = 0; i < n; ++i) gx[i] += dfn(x[i], y[i]) * gy[i];
  });
  return out;
}

}  // namespace

// ---------------- elementwise ----------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = Tensor<T>::zeros(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* y = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    int64_t n = static_cast<int64_t>(oi->data.size());
    if (ra) {
      T* ga = grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int64_t i = 0; i < n; ++i) gb[i] += gy[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto out = Tensor<T>::zeros(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* y = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] - pb[i];
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    int64_t n = static_cast<int64_t>(oi->data.size());
    if (ra) {
      T* ga = grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = Tensor<T>::zeros(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* y = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] * pb[i];
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    const T* pa = ai->data.data();
    const T* pb = bi->data.data();
    int64_t n = static_cast<int64_t>(oi->data.size());
    if (ra) {
      T* ga = grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i) ga[i] += pb[i] * gy[i];
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int64_t i = 0; i < n; ++i) gb[i] += pa[i] * gy[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary_elem(
      a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return unary_elem(
      a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar_t(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) raise(ErrorKind::shape_mismatch, "mul_scalar_t: s must be scalar");
  auto out = Tensor<T>::zeros(x.shape());
  T sv = s.data()[0];
  const T* px = x.ptr();
  T* y = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = px[i] * sv;
  bool rx = grad_relevant(x), rs = grad_relevant(s);
  auto xi = x.impl(), si = s.impl(), oi = out.impl();
  maybe_record(out, rx || rs, [xi, si, oi, rx, rs]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    const T* px = xi->data.data();
    T sv = si->data[0];
    int64_t n = static_cast<int64_t>(oi->data.size());
    if (rx) {
      T* gx = grad_buffer(xi);
      for (int64_t i = 0; i < n; ++i) gx[i] += sv * gy[i];
    }
    if (rs) {
      T acc = T(0);
      for (int64_t i = 0; i < n; ++i) acc += px[i] * gy[i];
      grad_buffer(si)[0] += acc;
    }
  });
  return out;
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a) {
  return unary_elem(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) {
  return unary_elem(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_elem(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary_elem(
      a,
      [](T x) {
        if (x > T(0)) return x + std::log1p(std::exp(-x));
        return std::log1p(std::exp(x));
      },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Tensor<T> clamp_elem(const Tensor<T>& a, T lo, T hi) {
  return unary_elem(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "minimum");
  auto out = Tensor<T>::zeros(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* y = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] <= pb[i] ? pa[i] : pb[i];
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    const T* pa = ai->data.data();
    const T* pb = bi->data.data();
    int64_t n = static_cast<int64_t>(oi->data.size());
    if (ra) {
      T* ga = grad_buffer(ai);
      for (int64_t i = 0; i < n; ++i)
        if (pa[i] <= pb[i]) ga[i] += gy[i];
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int64_t i = 0; i < n; ++i)
        if (pb[i] < pa[i]) gb[i] += gy[i];
    }
  });
  return out;
}

// ---------------- shape ----------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    raise(ErrorKind::shape_mismatch, "reshape: element count mismatch");
  auto out = Tensor<T>::from_data(std::move(shape), a.data());
  bool rel = grad_relevant(a);
  auto ai = a.impl(), oi = out.impl();
  maybe_record(out, rel, [ai, oi]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    T* gx = grad_buffer(ai);
    int64_t n = static_cast<int64_t>(ai->data.size());
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) raise(ErrorKind::shape_mismatch, "concat_cols: row counts differ");
  int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  auto out = Tensor<T>::zeros({rows, ca + cb});
  for (int r = 0; r < rows; ++r) {
    std::memcpy(out.ptr() + static_cast<int64_t>(r) * (ca + cb), a.ptr() + static_cast<int64_t>(r) * ca,
                sizeof(T) * static_cast<size_t>(ca));
    std::memcpy(out.ptr() + static_cast<int64_t>(r) * (ca + cb) + ca,
                b.ptr() + static_cast<int64_t>(r) * cb, sizeof(T) * static_cast<size_t>(cb));
  }
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb, rows, ca, cb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    if (ra) {
      T* ga = grad_buffer(ai);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < ca; ++c)
          ga[static_cast<int64_t>(r) * ca + c] += gy[static_cast<int64_t>(r) * (ca + cb) + c];
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cb; ++c)
          gb[static_cast<int64_t>(r) * cb + c] += gy[static_cast<int64_t>(r) * (ca + cb) + ca + c];
    }
  });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  require_2d(a, "slice_cols");
  int rows = a.dim(0), cols = a.dim(1);
  if (c0 < 0 || c1 > cols || c0 >= c1)
    raise(ErrorKind::invalid_argument, "slice_cols: bad column range");
  int w = c1 - c0;
  auto out = Tensor<T>::zeros({rows, w});
  for (int r = 0; r < rows; ++r)
    std::memcpy(out.ptr() + static_cast<int64_t>(r) * w,
                a.ptr() + static_cast<int64_t>(r) * cols + c0, sizeof(T) * static_cast<size_t>(w));
  bool rel = grad_relevant(a);
  auto ai = a.impl(), oi = out.impl();
  maybe_record(out, rel, [ai, oi, rows, cols, c0, w]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    T* ga = grad_buffer(ai);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c)
        ga[static_cast<int64_t>(r) * cols + c0 + c] += gy[static_cast<int64_t>(r) * w + c];
  });
  return out;
}

// ---------------- reductions ----------------

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  require_2d(a, "row_sum");
  int rows = a.dim(0), cols = a.dim(1);
  auto out = Tensor<T>::zeros({rows, 1});
  const T* x = a.ptr();
  for (int r = 0; r < rows; ++r) {
    T acc = T(0);
    for (int c = 0; c < cols; ++c) acc += x[static_cast<int64_t>(r) * cols + c];
    out.ptr()[r] = acc;
  }
  bool rel = grad_relevant(a);
  auto ai = a.impl(), oi = out.impl();
  maybe_record(out, rel, [ai, oi, rows, cols]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    T* ga = grad_buffer(ai);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) ga[static_cast<int64_t>(r) * cols + c] += gy[r];
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto out = Tensor<T>::zeros({1});
  const T* x = a.ptr();
  T acc = T(0);
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) acc += x[i];
  out.ptr()[0] = acc;
  bool rel = grad_relevant(a);
  auto ai = a.impl(), oi = out.impl();
  maybe_record(out, rel, [ai, oi]() {
    if (oi->grad.empty()) return;
    T g = oi->grad[0];
    T* ga = grad_buffer(ai);
    int64_t n = static_cast<int64_t>(ai->data.size());
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  int64_t n = a.numel();
  if (n == 0) raise(ErrorKind::invalid_argument, "mean_all: empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// ---------------- layer norm ----------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_2d(x, "layer_norm");
  int rows = x.dim(0), cols = x.dim(1);
  if (gain.numel() != cols || bias.numel() != cols)
    raise(ErrorKind::shape_mismatch, "layer_norm: gain/bias size mismatch");
  auto out = Tensor<T>::zeros(x.shape());
  auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(rows) * 2);
  const T* px = x.ptr();
  const T* pg = gain.ptr();
  const T* pb = bias.ptr();
  T* py = out.ptr();
  for (int r = 0; r < rows; ++r) {
    const T* xr = px + static_cast<int64_t>(r) * cols;
    T mean = T(0);
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (int c = 0; c < cols; ++c) {
      T d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(cols);
    T inv = T(1) / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(r) * 2] = mean;
    (*stats)[static_cast<size_t>(r) * 2 + 1] = inv;
    T* yr = py + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mean) * inv * pg[c] + pb[c];
  }
  bool rx = grad_relevant(x), rg = grad_relevant(gain), rb = grad_relevant(bias);
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
  maybe_record(out, rx || rg || rb, [xi, gi, bi, oi, stats, rows, cols, rx, rg, rb]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    const T* px = xi->data.data();
    const T* pg = gi->data.data();
    T* gx = rx ? grad_buffer(xi) : nullptr;
    T* gg = rg ? grad_buffer(gi) : nullptr;
    T* gb = rb ? grad_buffer(bi) : nullptr;
    for (int r = 0; r < rows; ++r) {
      const T* xr = px + static_cast<int64_t>(r) * cols;
      const T* gyr = gy + static_cast<int64_t>(r) * cols;
      T mean = (*stats)[static_cast<size_t>(r) * 2];
      T inv = (*stats)[static_cast<size_t>(r) * 2 + 1];
      T sum_dxh = T(0), sum_dxh_xh = T(0);
      for (int c = 0; c < cols; ++c) {
        T xh = (xr[c] - mean) * inv;
        T dxh = gyr[c] * pg[c];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
        if (gg) gg[c] += gyr[c] * xh;
        if (gb) gb[c] += gyr[c];
      }
      if (gx) {
        T* gxr = gx + static_cast<int64_t>(r) * cols;
        T invn = T(1) / static_cast<T>(cols);
        for (int c = 0; c < cols; ++c) {
          T xh = (xr[c] - mean) * inv;
          T dxh = gyr[c] * pg[c];
          gxr[c] += inv * (dxh - invn * sum_dxh - xh * invn * sum_dxh_xh);
        }
      }
    }
  });
  return out;
}

// ---------------- softmax cross entropy ----------------

template <typename T>
Tensor<T> softmax_xent_mean(const Tensor<T>& logits, const std::vector<int>& labels,
                            Tensor<T>* probs_out) {
  require_2d(logits, "softmax_xent_mean");
  int rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<int>(labels.size()) != rows)
    raise(ErrorKind::shape_mismatch, "softmax_xent_mean: label count mismatch");
  for (int r = 0; r < rows; ++r)
    if (labels[r] < 0 || labels[r] >= cols)
      raise(ErrorKind::invalid_argument, "softmax_xent_mean: label out of range");
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(rows) * cols);
  const T* z = logits.ptr();
  T loss = T(0);
  for (int r = 0; r < rows; ++r) {
    const T* zr = z + static_cast<int64_t>(r) * cols;
    T mx = zr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
    T denom = T(0);
    for (int c = 0; c < cols; ++c) denom += std::exp(zr[c] - mx);
    T logden = std::log(denom);
    loss += logden + mx - zr[labels[static_cast<size_t>(r)]];
    T* pr = probs->data() + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) pr[c] = std::exp(zr[c] - mx) / denom;
  }
  loss /= static_cast<T>(rows);
  auto out = Tensor<T>::scalar(loss);
  if (probs_out)
    *probs_out = Tensor<T>::from_data({rows, cols}, *probs);
  bool rel = grad_relevant(logits);
  auto li = logits.impl(), oi = out.impl();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  maybe_record(out, rel, [li, oi, probs, labels_copy, rows, cols]() {
    if (oi->grad.empty()) return;
    T g = oi->grad[0] / static_cast<T>(rows);
    T* gl = grad_buffer(li);
    for (int r = 0; r < rows; ++r) {
      const T* pr = probs->data() + static_cast<int64_t>(r) * cols;
      T* gr = gl + static_cast<int64_t>(r) * cols;
      int lab = (*labels_copy)[static_cast<size_t>(r)];
      for (int c = 0; c < cols; ++c) gr[c] += g * (pr[c] - (c == lab ? T(1) : T(0)));
    }
  });
  return out;
}

// ---------------- matrix products ----------------

namespace {

// Reference GEMM used by the double-precision path.
template <typename T>
void gemm_ref(int M, int N, int K, const T* a, int64_t ars, int64_t acs, const T* b,
              int64_t ldb, T* c, int64_t ldc, bool accumulate) {
  for (int m = 0; m < M; ++m) {
    T* cr = c + static_cast<int64_t>(m) * ldc;
    if (!accumulate)
      for (int n = 0; n < N; ++n) cr[n] = T(0);
    for (int k = 0; k < K; ++k) {
      T av = a[m * ars + k * acs];
      const T* br = b + static_cast<int64_t>(k) * ldb;
      for (int n = 0; n < N; ++n) cr[n] += av * br[n];
    }
  }
}

template <typename T>
void gemm_any(int M, int N, int K, const T* a, int64_t ars, int64_t acs, const T* b,
              int64_t ldb, T* c, int64_t ldc, bool accumulate,
              const T* bias_row = nullptr, const T* bias_col = nullptr, bool do_relu = false) {
  if constexpr (std::is_same_v<T, float>) {
    kern::gemm_dense(M, N, K, a, ars, acs, b, ldb, c, ldc, accumulate, bias_row, bias_col,
                     do_relu);
  } else {
    gemm_ref(M, N, K, a, ars, acs, b, ldb, c, ldc, accumulate);
    if (!accumulate && (bias_row || bias_col || do_relu)) {
      for (int m = 0; m < M; ++m) {
        T* cr = c + static_cast<int64_t>(m) * ldc;
        for (int n = 0; n < N; ++n) {
          T v = cr[n];
          if (bias_row) v += bias_row[m];
          if (bias_col) v += bias_col[n];
          if (do_relu && v < T(0)) v = T(0);
          cr[n] = v;
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose_any(const T* src, int rows, int cols) {
  std::vector<T> out(static_cast<size_t>(rows) * cols);
  if constexpr (std::is_same_v<T, float>) {
    kern::transpose_f32(src, rows, cols, out.data());
  } else {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out[static_cast<int64_t>(c) * rows + r] = src[static_cast<int64_t>(r) * cols + c];
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) raise(ErrorKind::shape_mismatch, "matmul: inner dims differ");
  auto out = Tensor<T>::zeros({m, n});
  gemm_any<T>(m, n, k, a.ptr(), k, 1, b.ptr(), n, out.ptr(), n, false);
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb, m, n, k]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    if (ra) {
      // dA = dC * B^T
      auto bt = transpose_any(bi->data.data(), k, n);
      gemm_any<T>(m, k, n, gy, n, 1, bt.data(), k, grad_buffer(ai), k, true);
    }
    if (rb) {
      // dB = A^T * dC
      gemm_any<T>(k, n, m, ai->data.data(), 1, k, gy, n, grad_buffer(bi), n, true);
    }
  });
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) raise(ErrorKind::shape_mismatch, "matmul_nt: inner dims differ");
  auto out = Tensor<T>::zeros({m, n});
  {
    auto bt = transpose_any(b.ptr(), n, k);  // [k, n]
    gemm_any<T>(m, n, k, a.ptr(), k, 1, bt.data(), n, out.ptr(), n, false);
  }
  bool ra = grad_relevant(a), rb = grad_relevant(b);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  maybe_record(out, ra || rb, [ai, bi, oi, ra, rb, m, n, k]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    if (ra) {
      // dA = dC * B   ([m,n] x [n,k])
      gemm_any<T>(m, k, n, gy, n, 1, bi->data.data(), k, grad_buffer(ai), k, true);
    }
    if (rb) {
      // dB = dC^T * A ([n,m] x [m,k])
      gemm_any<T>(n, k, m, gy, 1, n, ai->data.data(), k, grad_buffer(bi), k, true);
    }
  });
  return out;
}

// ---------------- dense layer ----------------

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                        Act act) {
  require_2d(x, "dense_forward");
  require_2d(w, "dense_forward");
  int batch = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) raise(ErrorKind::shape_mismatch, "dense_forward: weight rows != input dim");
  bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim)
    raise(ErrorKind::shape_mismatch, "dense_forward: bias size mismatch");
  auto out = Tensor<T>::zeros({batch, out_dim});
  gemm_any<T>(batch, out_dim, in, x.ptr(), in, 1, w.ptr(), out_dim, out.ptr(), out_dim, false,
              nullptr, has_bias ? bias.ptr() : nullptr, act == Act::relu);
  bool rx = grad_relevant(x), rw = grad_relevant(w);
  bool rb = has_bias && grad_relevant(bias);
  auto xi = x.impl(), wi = w.impl(), oi = out.impl();
  auto bi = has_bias ? bias.impl() : nullptr;
  maybe_record(out, rx || rw || rb, [xi, wi, bi, oi, rx, rw, rb, batch, in, out_dim, act]() {
    if (oi->grad.empty()) return;
    const T* gy = oi->grad.data();
    int64_t n = static_cast<int64_t>(oi->data.size());
    // With a fused ReLU the incoming gradient is masked by the activation.
    std::vector<T> dz_store;
    const T* dz = gy;
    if (act == Act::relu) {
      dz_store.resize(static_cast<size_t>(n));
      const T* y = oi->data.data();
      for (int64_t i = 0; i < n; ++i) dz_store[static_cast<size_t>(i)] = y[i] > T(0) ? gy[i] : T(0);
      dz = dz_store.data();
    }
    if (rx) {
      auto wt = transpose_any(wi->data.data(), in, out_dim);  // [out,in]
      gemm_any<T>(batch, in, out_dim, dz, out_dim, 1, wt.data(), in, grad_buffer(xi), in, true);
    }
    if (rw) {
      // dW = X^T * dZ
      gemm_any<T>(in, out_dim, batch, xi->data.data(), 1, in, dz, out_dim, grad_buffer(wi),
                  out_dim, true);
    }
    if (rb) {
      T* gb = grad_buffer(bi);
      for (int r = 0; r < batch; ++r)
        for (int c = 0; c < out_dim; ++c) gb[c] += dz[static_cast<int64_t>(r) * out_dim + c];
    }
  });
  return out;
}

// ---------------- convolution ----------------

namespace {

struct ConvDims {
  int batch, in_c, h, w, out_c, kh, kw, stride, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& k, int stride) {
  if (x.ndim() != 4 || k.ndim() != 4)
    raise(ErrorKind::shape_mismatch, "conv_forward: expected 4-d input and kernel");
  ConvDims d;
  d.batch = x.dim(0);
  d.in_c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.out_c = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.stride = stride;
  if (k.dim(1) != d.in_c) raise(ErrorKind::shape_mismatch, "conv_forward: channel mismatch");
  if (stride < 1) raise(ErrorKind::invalid_argument, "conv_forward: stride must be >= 1");
  if (d.h < d.kh || d.w < d.kw)
    raise(ErrorKind::shape_mismatch, "conv_forward: input smaller than kernel");
  d.oh = (d.h - d.kh) / stride + 1;
  d.ow = (d.w - d.kw) / stride + 1;
  return d;
}

// Reference forward (any dtype / geometry).
template <typename T>
void conv_ref_forward(const ConvDims& d, const T* x, const T* w, const T* b, T* y, Act act) {
  int64_t chw = static_cast<int64_t>(d.in_c) * d.h * d.w;
  int64_t ohw = static_cast<int64_t>(d.out_c) * d.oh * d.ow;
  for (int n = 0; n < d.batch; ++n) {
    const T* xn = x + n * chw;
    T* yn = y + n * ohw;
    for (int o = 0; o < d.out_c; ++o) {
      const T* wo = w + static_cast<int64_t>(o) * d.in_c * d.kh * d.kw;
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          T acc = b ? b[o] : T(0);
          for (int c = 0; c < d.in_c; ++c)
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx)
                acc += xn[(static_cast<int64_t>(c) * d.h + (oy * d.stride + ky)) * d.w +
                          (ox * d.stride + kx)] *
                       wo[(static_cast<int64_t>(c) * d.kh + ky) * d.kw + kx];
          if (act == Act::relu && acc < T(0)) acc = T(0);
          yn[(static_cast<int64_t>(o) * d.oh + oy) * d.ow + ox] = acc;
        }
    }
  }
}

// Reference backward scatter (any dtype / geometry).
template <typename T>
void conv_ref_backward(const ConvDims& d, const T* x, const T* w, const T* y, const T* gy,
                       Act act, T* gx, T* gw, T* gb) {
  int64_t chw = static_cast<int64_t>(d.in_c) * d.h * d.w;
  int64_t ohw = static_cast<int64_t>(d.out_c) * d.oh * d.ow;
  for (int n = 0; n < d.batch; ++n) {
    const T* xn = x + n * chw;
    for (int o = 0; o < d.out_c; ++o) {
      const T* wo = w + static_cast<int64_t>(o) * d.in_c * d.kh * d.kw;
      T* gwo = gw ? gw + static_cast<int64_t>(o) * d.in_c * d.kh * d.kw : nullptr;
      for (int oy = 0; oy < d.oh; ++oy)
        for (int ox = 0; ox < d.ow; ++ox) {
          int64_t yi = n * ohw + (static_cast<int64_t>(o) * d.oh + oy) * d.ow + ox;
          T g = gy[yi];
          if (act == Act::relu && y[yi] <= T(0)) g = T(0);
          if (g == T(0)) continue;
          if (gb) gb[o] += g;
          for (int c = 0; c < d.in_c; ++c)
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx) {
                int64_t xi = (static_cast<int64_t>(c) * d.h + (oy * d.stride + ky)) * d.w +
                             (ox * d.stride + kx);
                int64_t wi = (static_cast<int64_t>(c) * d.kh + ky) * d.kw + kx;
                if (gx) gx[n * chw + xi] += g * wo[wi];
                if (gwo) gwo[wi] += g * xn[xi];
              }
        }
    }
  }
}

// Fast path, stride 1, 3x3: implicit GEMM directly over input planes using a
// "full width" output panel whose x >= ow columns are junk that no consumer
// reads (the panel is compacted into the packed output right after).
void conv_s1_forward_f32(const ConvDims& d, const float* x, const float* w, const float* b,
                         float* y, Act act) {
  int W = d.w, H = d.h, C = d.in_c, O = d.out_c, oh = d.oh, ow = d.ow;
  int c9 = C * 9;
  int pfull = (oh - 1) * W + ow;
  int64_t chw = static_cast<int64_t>(C) * H * W;
  int64_t ohw = static_cast<int64_t>(O) * oh * ow;
  std::vector<float> outfw(static_cast<size_t>(O) * pfull);
  std::vector<const float*> wrows(static_cast<size_t>(O));
  for (int o = 0; o < O; ++o) wrows[static_cast<size_t>(o)] = w + static_cast<int64_t>(o) * c9;
  std::vector<const float*> brows(static_cast<size_t>(c9));
  for (int n = 0; n < d.batch; ++n) {
    const float* xn = x + n * chw;
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          brows[static_cast<size_t>(c * 9 + ky * 3 + kx)] =
              xn + static_cast<int64_t>(c) * H * W + ky * W + kx;
    kern::GemmArgs g;
    g.M = O;
    g.N = pfull;
    g.K = c9;
    g.arows = wrows.data();
    g.acs = 1;
    g.brows = brows.data();
    g.c = outfw.data();
    g.ldc = pfull;
    g.bias_row = b;
    g.relu = act == Act::relu;
    kern::gemm_ptr(g);
    float* yn = y + n * ohw;
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < oh; ++oy)
        std::memcpy(yn + (static_cast<int64_t>(o) * oh + oy) * ow,
                    outfw.data() + static_cast<int64_t>(o) * pfull + oy * W,
                    sizeof(float) * static_cast<size_t>(ow));
  }
}

void conv_s1_backward_f32(const ConvDims& d, const float* x, const float* w, const float* y,
                          const float* gy, Act act, float* gx, float* gw, float* gb) {
  int W = d.w, H = d.h, C = d.in_c, O = d.out_c, oh = d.oh, ow = d.ow;
  int c9 = C * 9;
  int o9 = O * 9;
  int hw = H * W;
  int pfull = (oh - 1) * W + ow;
  int margin = 2 * W + 2;
  int clen = margin + hw;
  int64_t chw = static_cast<int64_t>(C) * hw;
  int64_t ohw = static_cast<int64_t>(O) * oh * ow;

  // w transposed to [C x O*9] for the dX product.
  std::vector<float> wt;
  if (gx) {
    wt.resize(static_cast<size_t>(C) * o9);
    for (int o = 0; o < O; ++o)
      for (int c = 0; c < C; ++c)
        for (int j = 0; j < 9; ++j)
          wt[(static_cast<int64_t>(c) * O + o) * 9 + j] =
              w[(static_cast<int64_t>(o) * C + c) * 9 + j];
  }

  std::vector<float> canvas(static_cast<size_t>(O) * clen, 0.0f);
  std::vector<float> dyfwt(gw ? static_cast<size_t>(pfull) * O : 0);
  std::vector<float> dwt(gw ? static_cast<size_t>(c9) * O : 0, 0.0f);
  std::vector<double> dbacc(gb ? static_cast<size_t>(O) : 0, 0.0);

  std::vector<const float*> colrows(static_cast<size_t>(c9));
  std::vector<const float*> dyrows(gw ? static_cast<size_t>(pfull) : 0);
  for (int p = 0; p < pfull && gw; ++p)
    dyrows[static_cast<size_t>(p)] = dyfwt.data() + static_cast<int64_t>(p) * O;
  std::vector<const float*> crows(gx ? static_cast<size_t>(o9) : 0);
  std::vector<const float*> wtrows(gx ? static_cast<size_t>(C) : 0);
  if (gx) {
    for (int o = 0; o < O; ++o)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          crows[static_cast<size_t>(o * 9 + ky * 3 + kx)] =
              canvas.data() + static_cast<int64_t>(o) * clen + margin - (ky * W + kx);
    for (int c = 0; c < C; ++c)
      wtrows[static_cast<size_t>(c)] = wt.data() + static_cast<int64_t>(c) * o9;
  }

  for (int n = 0; n < d.batch; ++n) {
    const float* xn = x + n * chw;
    const float* yn = y + n * ohw;
    const float* gyn = gy + n * ohw;
    // Stage the (activation-masked) output gradient into the padded canvas
    // with contiguous row writes; junk cells were zeroed once and are never
    // written, so canvas sums and the transposed dW panel stay exact.
    for (int o = 0; o < O; ++o) {
      float* cv = canvas.data() + static_cast<int64_t>(o) * clen + margin;
      const float* go = gyn + static_cast<int64_t>(o) * oh * ow;
      const float* vo = yn + static_cast<int64_t>(o) * oh * ow;
      double db = 0.0;
      for (int oy = 0; oy < oh; ++oy) {
        float* dst = cv + static_cast<int64_t>(oy) * W;
        const float* gr = go + static_cast<int64_t>(oy) * ow;
        const float* vr = vo + static_cast<int64_t>(oy) * ow;
        if (act == Act::relu) {
          for (int ox = 0; ox < ow; ++ox) dst[ox] = vr[ox] > 0.0f ? gr[ox] : 0.0f;
        } else {
          std::memcpy(dst, gr, sizeof(float) * static_cast<size_t>(ow));
        }
        if (gb) {
          float s = 0.0f;
          for (int ox = 0; ox < ow; ++ox) s += dst[ox];
          db += s;
        }
      }
      if (gb) dbacc[static_cast<size_t>(o)] += db;
    }
    if (gw)
      kern::transpose_strided_f32(canvas.data() + margin, O, pfull, clen, dyfwt.data(), O);
    if (gw) {
      for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            colrows[static_cast<size_t>(c * 9 + ky * 3 + kx)] =
                xn + static_cast<int64_t>(c) * hw + ky * W + kx;
      kern::GemmArgs g;
      g.M = c9;
      g.N = O;
      g.K = pfull;
      g.arows = colrows.data();
      g.acs = 1;
      g.brows = dyrows.data();
      g.c = dwt.data();
      g.ldc = O;
      g.accumulate = n > 0;
      kern::gemm_ptr(g);
    }
    if (gx) {
      kern::GemmArgs g;
      g.M = C;
      g.N = hw;
      g.K = o9;
      g.arows = wtrows.data();
      g.acs = 1;
      g.brows = crows.data();
      g.c = gx + n * chw;
      g.ldc = hw;
      g.accumulate = true;
      kern::gemm_ptr(g);
    }
  }
  if (gw)
    for (int o = 0; o < O; ++o)
      for (int q = 0; q < c9; ++q)
        gw[static_cast<int64_t>(o) * c9 + q] += dwt[static_cast<int64_t>(q) * O + o];
  if (gb)
    for (int o = 0; o < O; ++o) gb[o] += static_cast<float>(dbacc[static_cast<size_t>(o)]);
}

// Fast path, stride 2, 3x3: im2col per image. The column buffer is built in
// the forward pass and reused by the weight-gradient GEMM in backward.
void conv_s2_im2col(const ConvDims& d, const float* xn, float* col) {
  int W = d.w, C = d.in_c, oh = d.oh, ow = d.ow;
  int p = oh * ow;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* row = col + (static_cast<int64_t>(c) * 9 + ky * 3 + kx) * p;
        const float* src = xn + static_cast<int64_t>(c) * d.h * W + ky * W + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const float* s = src + static_cast<int64_t>(oy) * 2 * W;
          float* r = row + static_cast<int64_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) r[ox] = s[ox * 2];
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, int stride,
                       Act act) {
  ConvDims d = conv_dims(x, k, stride);
  bool has_bias = bias.defined();
  if (has_bias && bias.numel() != d.out_c)
    raise(ErrorKind::shape_mismatch, "conv_forward: bias size mismatch");
  auto out = Tensor<T>::zeros({d.batch, d.out_c, d.oh, d.ow});

  bool rx = grad_relevant(x), rw = grad_relevant(k);
  bool rb = has_bias && grad_relevant(bias);
  bool recording = (rx || rw || rb) && active_tape<T>() != nullptr;

  constexpr bool is_f32 = std::is_same_v<T, float>;
  bool fast1 = is_f32 && stride == 1 && d.kh == 3 && d.kw == 3;
  bool fast2 = is_f32 && stride == 2 && d.kh == 3 && d.kw == 3;

  std::shared_ptr<std::vector<float>> col_saved;

  if constexpr (is_f32) {
    if (fast1) {
      conv_s1_forward_f32(d, reinterpret_cast<const float*>(x.ptr()),
                          reinterpret_cast<const float*>(k.ptr()),
                          has_bias ? reinterpret_cast<const float*>(bias.ptr()) : nullptr,
                          reinterpret_cast<float*>(out.ptr()), act);
    } else if (fast2) {
      int p = d.oh * d.ow;
      int c9 = d.in_c * 9;
      auto col = std::make_shared<std::vector<float>>(
          static_cast<size_t>(recording ? d.batch : 1) * c9 * p);
      for (int n = 0; n < d.batch; ++n) {
        float* coln = col->data() + (recording ? static_cast<int64_t>(n) * c9 * p : 0);
        conv_s2_im2col(d, reinterpret_cast<const float*>(x.ptr()) +
                              static_cast<int64_t>(n) * d.in_c * d.h * d.w,
                       coln);
        kern::gemm_dense(d.out_c, p, c9, reinterpret_cast<const float*>(k.ptr()), c9, 1, coln, p,
                         reinterpret_cast<float*>(out.ptr()) + static_cast<int64_t>(n) * d.out_c * p,
                         p, false, has_bias ? reinterpret_cast<const float*>(bias.ptr()) : nullptr,
                         nullptr, act == Act::relu);
      }
      if (recording) col_saved = col;
    } else {
      conv_ref_forward(d, x.ptr(), k.ptr(), has_bias ? bias.ptr() : nullptr, out.ptr(), act);
    }
  } else {
    conv_ref_forward(d, x.ptr(), k.ptr(), has_bias ? bias.ptr() : nullptr, out.ptr(), act);
  }

  auto xi = x.impl(), wi = k.impl(), oi = out.impl();
  auto bi = has_bias ? bias.impl() : nullptr;
  maybe_record(out, rx || rw || rb,
               [xi, wi, bi, oi, d, act, rx, rw, rb, fast1, fast2, col_saved]() {
    if (oi->grad.empty()) return;
    T* gx = rx ? grad_buffer(xi) : nullptr;
    T* gw = rw ? grad_buffer(wi) : nullptr;
    T* gb = rb ? grad_buffer(bi) : nullptr;
    if constexpr (std::is_same_v<T, float>) {
      if (fast1) {
        conv_s1_backward_f32(d, xi->data.data(), wi->data.data(), oi->data.data(),
                             oi->grad.data(), act, gx, gw, gb);
        return;
      }
      if (fast2) {
        int p = d.oh * d.ow;
        int c9 = d.in_c * 9;
        int O = d.out_c;
        std::vector<float> dz(static_cast<size_t>(O) * p);
        std::vector<float> dzt(static_cast<size_t>(p) * O);
        std::vector<float> dwt(gw ? static_cast<size_t>(c9) * O : 0, 0.0f);
        for (int n = 0; n < d.batch; ++n) {
          const float* gyn = oi->grad.data() + static_cast<int64_t>(n) * O * p;
          const float* yn = oi->data.data() + static_cast<int64_t>(n) * O * p;
          for (int i = 0; i < O * p; ++i)
            dz[static_cast<size_t>(i)] =
                (act == Act::relu && yn[i] <= 0.0f) ? 0.0f : gyn[i];
          if (gb)
            for (int o = 0; o < O; ++o) {
              double acc = 0.0;
              for (int q = 0; q < p; ++q) acc += dz[static_cast<size_t>(o) * p + q];
              gb[o] += static_cast<float>(acc);
            }
          if (gw) {
            kern::transpose_f32(dz.data(), O, p, dzt.data());
            const float* coln = col_saved->data() + static_cast<int64_t>(n) * c9 * p;
            kern::gemm_dense(c9, O, p, coln, p, 1, dzt.data(), O, dwt.data(), O, n > 0);
          }
          if (gx) {
            // Rare path (input gradients through a stride-2 stem); scatter.
            ConvDims d1 = d;
            d1.batch = 1;
            conv_ref_backward(d1, xi->data.data() + static_cast<int64_t>(n) * d.in_c * d.h * d.w,
                              wi->data.data(), yn, gyn, act,
                              gx + static_cast<int64_t>(n) * d.in_c * d.h * d.w,
                              static_cast<float*>(nullptr), static_cast<float*>(nullptr));
          }
        }
        if (gw)
          for (int o = 0; o < O; ++o)
            for (int q = 0; q < c9; ++q)
              gw[static_cast<int64_t>(o) * c9 + q] += dwt[static_cast<int64_t>(q) * O + o];
        return;
      }
    }
    conv_ref_backward(d, xi->data.data(), wi->data.data(), oi->data.data(), oi->grad.data(), act,
                      gx, gw, gb);
  });
  return out;
}

// ---------------- instantiations ----------------

#define FERM_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> mul_scalar_t(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> exp_elem(const Tensor<T>&);                                             \
  template Tensor<T> tanh_act(const Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> softplus(const Tensor<T>&);                                             \
  template Tensor<T> clamp_elem(const Tensor<T>&, T, T);                                     \
  template Tensor<T> minimum(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reshape(const Tensor<T>&, std::vector<int>);                            \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> slice_cols(const Tensor<T>&, int, int);                                 \
  template Tensor<T> row_sum(const Tensor<T>&);                                              \
  template Tensor<T> sum_all(const Tensor<T>&);                                              \
  template Tensor<T> mean_all(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> softmax_xent_mean(const Tensor<T>&, const std::vector<int>&,            \
                                       Tensor<T>*);                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   Act);                                                     \
  template Tensor<T> conv_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                  Act);

FERM_INSTANTIATE_OPS(float)
FERM_INSTANTIATE_OPS(double)

#undef FERM_INSTANTIATE_OPS

}  // namespace ferm::grad
