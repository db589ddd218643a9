#include "ferm/nets/init.hpp"

#include <cmath>
#include <vector>

#include "ferm/util/error.hpp"

namespace ferm::nets {

namespace {

// Orthonormalize `k` rows of length `n` (k <= n) in place.
void gram_schmidt_rows(std::vector<double>& m, int k, int n) {
  for (int i = 0; i < k; ++i) {
    double* ri = m.data() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < i; ++j) {
      const double* rj = m.data() + static_cast<int64_t>(j) * n;
      double dot = 0.0;
      for (int t = 0; t < n; ++t) dot += ri[t] * rj[t];
      for (int t = 0; t < n; ++t) ri[t] -= dot * rj[t];
    }
    double norm = 0.0;
    for (int t = 0; t < n; ++t) norm += ri[t] * ri[t];
    norm = std::sqrt(norm);
    if (norm < 1e-12) raise(ErrorKind::numeric, "orthogonal init: degenerate draw");
    double inv = 1.0 / norm;
    for (int t = 0; t < n; ++t) ri[t] *= inv;
  }
}

}  // namespace

grad::Tensor<float> orthogonal_init(int out, int in, Rng& rng) {
  if (out <= 0 || in <= 0)
    raise(ErrorKind::invalid_argument, "orthogonal init: empty shape");
  int k = std::min(out, in);
  int n = std::max(out, in);
  std::vector<double> m(static_cast<size_t>(k) * n);
  for (auto& v : m) v = rng.normal();
  gram_schmidt_rows(m, k, n);
  auto w = grad::Tensor<float>::zeros({out, in});
  auto& d = w.data();
  if (out <= in) {
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(m[i]);
  } else {
    // m holds `in` orthonormal rows of length `out`; transpose into [out, in].
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c)
        d[static_cast<size_t>(r) * in + c] =
            static_cast<float>(m[static_cast<size_t>(c) * out + r]);
  }
  return w;
}

grad::Tensor<float> uniform_fan_in(const std::vector<int>& shape, int fan_in,
                                   Rng& rng) {
  if (fan_in <= 0) raise(ErrorKind::invalid_argument, "fan-in init: bad fan_in");
  double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = grad::Tensor<float>::zeros(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-b, b));
  return t;
}

grad::Tensor<float> conv_init(int out_c, int in_c, int kh, int kw, Rng& rng) {
  return uniform_fan_in({out_c, in_c, kh, kw}, in_c * kh * kw, rng);
}

}  // namespace ferm::nets
