#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "ferm/grad/ops.hpp"
#include "ferm/grad/tensor.hpp"
#include "ferm/util/rng.hpp"

namespace testutil {

// Runs fn, which must throw FermError, and returns the error kind.
template <typename Fn>
ferm::ErrorKind thrown_kind(Fn&& fn) {
  try {
    fn();
  } catch (const ferm::FermError& e) {
    return e.kind();
  }
  FAIL("expected a FermError to be thrown");
  return ferm::ErrorKind::invalid_argument;
}

template <typename T>
void fill_uniform(ferm::grad::Tensor<T>& t, ferm::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
}

// Central-difference gradient check in double precision. loss_fn must build
// the scalar loss from the given parameters (re-evaluated after each nudge).
inline void check_grads(std::vector<ferm::grad::Tensor<double>> params,
                        const std::function<ferm::grad::Tensor<double>()>& loss_fn,
                        double tol = 1e-6, double h = 1e-5) {
  using namespace ferm::grad;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
    for (auto& p : params)
      analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.data().size(), 0.0));
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (size_t i = 0; i < p.data().size(); ++i) {
      double orig = p.data()[i];
      p.data()[i] = orig + h;
      double up = loss_fn().item();
      p.data()[i] = orig - h;
      double dn = loss_fn().item();
      p.data()[i] = orig;
      double fd = (up - dn) / (2.0 * h);
      double an = analytic[pi][i];
      double err = std::abs(fd - an) / std::max(1.0, std::max(std::abs(fd), std::abs(an)));
      INFO("param ", pi, " elem ", i, " fd=", fd, " analytic=", an);
      CHECK(err < tol);
    }
  }
}

// Independent dense-matmul oracle, double accumulation.
template <typename T>
std::vector<double> matmul_oracle(const std::vector<T>& a, const std::vector<T>& b, int m, int k,
                                  int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int q = 0; q < k; ++q)
        acc += static_cast<double>(a[static_cast<size_t>(i) * k + q]) *
               static_cast<double>(b[static_cast<size_t>(q) * n + j]);
      c[static_cast<size_t>(i) * n + j] = acc;
    }
  return c;
}

// Independent convolution oracle (valid padding), double accumulation.
template <typename T>
std::vector<double> conv_oracle(const std::vector<T>& x, const std::vector<T>& w,
                                const std::vector<T>* bias, int batch, int cin, int h, int win,
                                int cout, int kh, int kw, int stride, bool apply_relu) {
  int oh = (h - kh) / stride + 1;
  int ow = (win - kw) / stride + 1;
  std::vector<double> y(static_cast<size_t>(batch) * cout * oh * ow, 0.0);
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < cout; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[static_cast<size_t>(o)]) : 0.0;
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                double xv = x[((static_cast<size_t>(n) * cin + c) * h + (oy * stride + ky)) * win +
                              (ox * stride + kx)];
                double wv = w[((static_cast<size_t>(o) * cin + c) * kh + ky) * kw + kx];
                acc += xv * wv;
              }
          if (apply_relu && acc < 0.0) acc = 0.0;
          y[((static_cast<size_t>(n) * cout + o) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

}  // namespace testutil
