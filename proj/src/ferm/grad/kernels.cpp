#include "ferm/grad/kernels.hpp"

#include <algorithm>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace ferm::grad::kern {

#if defined(__AVX512F__)

namespace {

// Hot microkernel: a full 6 x (NV*16) tile of C with every accumulator in a
// named zmm register (gcc does not promote vector arrays out of the stack,
// so the naming is load-bearing). The last of the NV vectors is masked so N
// edges need no scalar cleanup.
template <int NV>
void micro6(int K, const float* const* arows, int64_t acs, int64_t ak0,
            const float* const* brows, int n0, float* c, int64_t ldc,
            bool accumulate, bool finalize, __mmask16 tail,
            const float* bias_row, const float* bias_col, bool relu) {
  const float* a0 = arows[0];
  const float* a1 = arows[1];
  const float* a2 = arows[2];
  const float* a3 = arows[3];
  const float* a4 = arows[4];
  const float* a5 = arows[5];

  __m512 c00, c01, c02, c03, c10, c11, c12, c13, c20, c21, c22, c23;
  __m512 c30, c31, c32, c33, c40, c41, c42, c43, c50, c51, c52, c53;

#define FERM_LOADC(r)                                                          \
  do {                                                                         \
    const float* row = c + (r) * ldc + n0;                                     \
    if constexpr (NV == 1) {                                                   \
      c##r##0 = _mm512_maskz_loadu_ps(tail, row);                              \
    } else {                                                                   \
      c##r##0 = _mm512_loadu_ps(row);                                          \
      if constexpr (NV == 2) c##r##1 = _mm512_maskz_loadu_ps(tail, row + 16);  \
      if constexpr (NV > 2) c##r##1 = _mm512_loadu_ps(row + 16);               \
      if constexpr (NV == 3) c##r##2 = _mm512_maskz_loadu_ps(tail, row + 32);  \
      if constexpr (NV > 3) {                                                  \
        c##r##2 = _mm512_loadu_ps(row + 32);                                   \
        c##r##3 = _mm512_maskz_loadu_ps(tail, row + 48);                       \
      }                                                                        \
    }                                                                          \
  } while (0)

#define FERM_ZEROC(r)                                                          \
  do {                                                                         \
    c##r##0 = _mm512_setzero_ps();                                             \
    if constexpr (NV > 1) c##r##1 = _mm512_setzero_ps();                       \
    if constexpr (NV > 2) c##r##2 = _mm512_setzero_ps();                       \
    if constexpr (NV > 3) c##r##3 = _mm512_setzero_ps();                       \
  } while (0)

  if (accumulate) {
    FERM_LOADC(0); FERM_LOADC(1); FERM_LOADC(2);
    FERM_LOADC(3); FERM_LOADC(4); FERM_LOADC(5);
  } else {
    FERM_ZEROC(0); FERM_ZEROC(1); FERM_ZEROC(2);
    FERM_ZEROC(3); FERM_ZEROC(4); FERM_ZEROC(5);
  }

  int64_t ak = ak0;
  for (int k = 0; k < K; ++k, ak += acs) {
    const float* br = brows[k] + n0;
    __m512 b0 = (NV == 1) ? _mm512_maskz_loadu_ps(tail, br) : _mm512_loadu_ps(br);
    __m512 b1, b2, b3;
    if constexpr (NV > 1)
      b1 = (NV == 2) ? _mm512_maskz_loadu_ps(tail, br + 16) : _mm512_loadu_ps(br + 16);
    if constexpr (NV > 2)
      b2 = (NV == 3) ? _mm512_maskz_loadu_ps(tail, br + 32) : _mm512_loadu_ps(br + 32);
    if constexpr (NV > 3) b3 = _mm512_maskz_loadu_ps(tail, br + 48);

#define FERM_ROWFMA(r)                                                         \
  do {                                                                         \
    __m512 av = _mm512_set1_ps(a##r[ak]);                                      \
    c##r##0 = _mm512_fmadd_ps(av, b0, c##r##0);                                \
    if constexpr (NV > 1) c##r##1 = _mm512_fmadd_ps(av, b1, c##r##1);          \
    if constexpr (NV > 2) c##r##2 = _mm512_fmadd_ps(av, b2, c##r##2);          \
    if constexpr (NV > 3) c##r##3 = _mm512_fmadd_ps(av, b3, c##r##3);          \
  } while (0)

    FERM_ROWFMA(0); FERM_ROWFMA(1); FERM_ROWFMA(2);
    FERM_ROWFMA(3); FERM_ROWFMA(4); FERM_ROWFMA(5);
#undef FERM_ROWFMA
  }

  __m512 bias0, bias1, bias2, bias3;
  if (finalize && bias_col) {
    bias0 = _mm512_maskz_loadu_ps(NV == 1 ? tail : static_cast<__mmask16>(0xffff), bias_col + n0);
    if constexpr (NV > 1)
      bias1 = _mm512_maskz_loadu_ps(NV == 2 ? tail : static_cast<__mmask16>(0xffff),
                                    bias_col + n0 + 16);
    if constexpr (NV > 2)
      bias2 = _mm512_maskz_loadu_ps(NV == 3 ? tail : static_cast<__mmask16>(0xffff),
                                    bias_col + n0 + 32);
    if constexpr (NV > 3) bias3 = _mm512_maskz_loadu_ps(tail, bias_col + n0 + 48);
  }

#define FERM_STOREC(r)                                                         \
  do {                                                                         \
    float* row = c + (r) * ldc + n0;                                           \
    if (finalize) {                                                            \
      if (bias_row) {                                                          \
        __m512 rb = _mm512_set1_ps(bias_row[r]);                               \
        c##r##0 = _mm512_add_ps(c##r##0, rb);                                  \
        if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, rb);            \
        if constexpr (NV > 2) c##r##2 = _mm512_add_ps(c##r##2, rb);            \
        if constexpr (NV > 3) c##r##3 = _mm512_add_ps(c##r##3, rb);            \
      }                                                                        \
      if (bias_col) {                                                          \
        c##r##0 = _mm512_add_ps(c##r##0, bias0);                               \
        if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, bias1);         \
        if constexpr (NV > 2) c##r##2 = _mm512_add_ps(c##r##2, bias2);         \
        if constexpr (NV > 3) c##r##3 = _mm512_add_ps(c##r##3, bias3);         \
      }                                                                        \
      if (relu) {                                                              \
        __m512 z = _mm512_setzero_ps();                                        \
        c##r##0 = _mm512_max_ps(c##r##0, z);                                   \
        if constexpr (NV > 1) c##r##1 = _mm512_max_ps(c##r##1, z);             \
        if constexpr (NV > 2) c##r##2 = _mm512_max_ps(c##r##2, z);             \
        if constexpr (NV > 3) c##r##3 = _mm512_max_ps(c##r##3, z);             \
      }                                                                        \
    }                                                                          \
    if constexpr (NV == 1) {                                                   \
      _mm512_mask_storeu_ps(row, tail, c##r##0);                               \
    } else {                                                                   \
      _mm512_storeu_ps(row, c##r##0);                                          \
      if constexpr (NV == 2) _mm512_mask_storeu_ps(row + 16, tail, c##r##1);   \
      if constexpr (NV > 2) _mm512_storeu_ps(row + 16, c##r##1);               \
      if constexpr (NV == 3) _mm512_mask_storeu_ps(row + 32, tail, c##r##2);   \
      if constexpr (NV > 3) {                                                  \
        _mm512_storeu_ps(row + 32, c##r##2);                                   \
        _mm512_mask_storeu_ps(row + 48, tail, c##r##3);                        \
      }                                                                        \
    }                                                                          \
  } while (0)

  FERM_STOREC(0); FERM_STOREC(1); FERM_STOREC(2);
  FERM_STOREC(3); FERM_STOREC(4); FERM_STOREC(5);
#undef FERM_STOREC
#undef FERM_LOADC
#undef FERM_ZEROC
}

// Narrow-C microkernel: 12 x (NV*16) for panels where the whole C width fits
// in at most two vectors. Doubling the row count keeps all 24 accumulators
// busy where micro6 would idle half of them.
template <int NV>
void micro12(int K, const float* const* arows, int64_t acs, int64_t ak0,
             const float* const* brows, int n0, float* c, int64_t ldc,
             bool accumulate, bool finalize, __mmask16 tail,
             const float* bias_row, const float* bias_col, bool relu) {
  static_assert(NV == 1 || NV == 2);
  const float* a0 = arows[0];
  const float* a1 = arows[1];
  const float* a2 = arows[2];
  const float* a3 = arows[3];
  const float* a4 = arows[4];
  const float* a5 = arows[5];
  const float* a6 = arows[6];
  const float* a7 = arows[7];
  const float* a8 = arows[8];
  const float* a9 = arows[9];
  const float* a10 = arows[10];
  const float* a11 = arows[11];

  __m512 c00, c01, c10, c11, c20, c21, c30, c31, c40, c41, c50, c51;
  __m512 c60, c61, c70, c71, c80, c81, c90, c91, c100, c101, c110, c111;

#define FERM_LOADC(r)                                                          \
  do {                                                                         \
    const float* row = c + (r) * ldc + n0;                                     \
    if constexpr (NV == 1) {                                                   \
      c##r##0 = _mm512_maskz_loadu_ps(tail, row);                              \
    } else {                                                                   \
      c##r##0 = _mm512_loadu_ps(row);                                          \
      c##r##1 = _mm512_maskz_loadu_ps(tail, row + 16);                         \
    }                                                                          \
  } while (0)

#define FERM_ZEROC(r)                                                          \
  do {                                                                         \
    c##r##0 = _mm512_setzero_ps();                                             \
    if constexpr (NV > 1) c##r##1 = _mm512_setzero_ps();                       \
  } while (0)

  if (accumulate) {
    FERM_LOADC(0); FERM_LOADC(1); FERM_LOADC(2); FERM_LOADC(3);
    FERM_LOADC(4); FERM_LOADC(5); FERM_LOADC(6); FERM_LOADC(7);
    FERM_LOADC(8); FERM_LOADC(9); FERM_LOADC(10); FERM_LOADC(11);
  } else {
    FERM_ZEROC(0); FERM_ZEROC(1); FERM_ZEROC(2); FERM_ZEROC(3);
    FERM_ZEROC(4); FERM_ZEROC(5); FERM_ZEROC(6); FERM_ZEROC(7);
    FERM_ZEROC(8); FERM_ZEROC(9); FERM_ZEROC(10); FERM_ZEROC(11);
  }

  int64_t ak = ak0;
  for (int k = 0; k < K; ++k, ak += acs) {
    const float* br = brows[k] + n0;
    __m512 b0 = (NV == 1) ? _mm512_maskz_loadu_ps(tail, br) : _mm512_loadu_ps(br);
    __m512 b1;
    if constexpr (NV > 1) b1 = _mm512_maskz_loadu_ps(tail, br + 16);

#define FERM_ROWFMA(r)                                                         \
  do {                                                                         \
    __m512 av = _mm512_set1_ps(a##r[ak]);                                      \
    c##r##0 = _mm512_fmadd_ps(av, b0, c##r##0);                                \
    if constexpr (NV > 1) c##r##1 = _mm512_fmadd_ps(av, b1, c##r##1);          \
  } while (0)

    FERM_ROWFMA(0); FERM_ROWFMA(1); FERM_ROWFMA(2); FERM_ROWFMA(3);
    FERM_ROWFMA(4); FERM_ROWFMA(5); FERM_ROWFMA(6); FERM_ROWFMA(7);
    FERM_ROWFMA(8); FERM_ROWFMA(9); FERM_ROWFMA(10); FERM_ROWFMA(11);
#undef FERM_ROWFMA
  }

  __m512 bias0, bias1;
  if (finalize && bias_col) {
    bias0 = _mm512_maskz_loadu_ps(NV == 1 ? tail : static_cast<__mmask16>(0xffff), bias_col + n0);
    if constexpr (NV > 1) bias1 = _mm512_maskz_loadu_ps(tail, bias_col + n0 + 16);
  }

#define FERM_STOREC(r)                                                         \
  do {                                                                         \
    float* row = c + (r) * ldc + n0;                                           \
    if (finalize) {                                                            \
      if (bias_row) {                                                          \
        __m512 rb = _mm512_set1_ps(bias_row[r]);                               \
        c##r##0 = _mm512_add_ps(c##r##0, rb);                                  \
        if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, rb);            \
      }                                                                        \
      if (bias_col) {                                                          \
        c##r##0 = _mm512_add_ps(c##r##0, bias0);                               \
        if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, bias1);         \
      }                                                                        \
      if (relu) {                                                              \
        __m512 z = _mm512_setzero_ps();                                        \
        c##r##0 = _mm512_max_ps(c##r##0, z);                                   \
        if constexpr (NV > 1) c##r##1 = _mm512_max_ps(c##r##1, z);             \
      }                                                                        \
    }                                                                          \
    if constexpr (NV == 1) {                                                   \
      _mm512_mask_storeu_ps(row, tail, c##r##0);                               \
    } else {                                                                   \
      _mm512_storeu_ps(row, c##r##0);                                          \
      _mm512_mask_storeu_ps(row + 16, tail, c##r##1);                          \
    }                                                                          \
  } while (0)

  FERM_STOREC(0); FERM_STOREC(1); FERM_STOREC(2); FERM_STOREC(3);
  FERM_STOREC(4); FERM_STOREC(5); FERM_STOREC(6); FERM_STOREC(7);
  FERM_STOREC(8); FERM_STOREC(9); FERM_STOREC(10); FERM_STOREC(11);
#undef FERM_STOREC
#undef FERM_LOADC
#undef FERM_ZEROC
}

// Edge microkernel for the final panel when M % 6 != 0. Same named-register
// discipline as micro6; at most 5 x 4 = 20 accumulators.
template <int MR, int NV>
void micro_edge(int K, const float* const* arows, int64_t acs, int64_t ak0,
                const float* const* brows, int n0, float* c, int64_t ldc,
                bool accumulate, bool finalize, __mmask16 tail,
                const float* bias_row, const float* bias_col, bool relu) {
  const float* a0 = arows[0];
  const float* a1 = MR > 1 ? arows[1] : nullptr;
  const float* a2 = MR > 2 ? arows[2] : nullptr;
  const float* a3 = MR > 3 ? arows[3] : nullptr;
  const float* a4 = MR > 4 ? arows[4] : nullptr;

  __m512 c00, c01, c02, c03, c10, c11, c12, c13, c20, c21, c22, c23;
  __m512 c30, c31, c32, c33, c40, c41, c42, c43;

#define FERM_LOADC(r)                                                          \
  do {                                                                         \
    if constexpr (MR > r) {                                                    \
      const float* row = c + (r) * ldc + n0;                                   \
      if constexpr (NV == 1) {                                                 \
        c##r##0 = _mm512_maskz_loadu_ps(tail, row);                            \
      } else {                                                                 \
        c##r##0 = _mm512_loadu_ps(row);                                        \
        if constexpr (NV == 2) c##r##1 = _mm512_maskz_loadu_ps(tail, row + 16); \
        if constexpr (NV > 2) c##r##1 = _mm512_loadu_ps(row + 16);             \
        if constexpr (NV == 3) c##r##2 = _mm512_maskz_loadu_ps(tail, row + 32); \
        if constexpr (NV > 3) {                                                \
          c##r##2 = _mm512_loadu_ps(row + 32);                                 \
          c##r##3 = _mm512_maskz_loadu_ps(tail, row + 48);                     \
        }                                                                      \
      }                                                                        \
    }                                                                          \
  } while (0)

#define FERM_ZEROC(r)                                                          \
  do {                                                                         \
    if constexpr (MR > r) {                                                    \
      c##r##0 = _mm512_setzero_ps();                                           \
      if constexpr (NV > 1) c##r##1 = _mm512_setzero_ps();                     \
      if constexpr (NV > 2) c##r##2 = _mm512_setzero_ps();                     \
      if constexpr (NV > 3) c##r##3 = _mm512_setzero_ps();                     \
    }                                                                          \
  } while (0)

  if (accumulate) {
    FERM_LOADC(0); FERM_LOADC(1); FERM_LOADC(2); FERM_LOADC(3); FERM_LOADC(4);
  } else {
    FERM_ZEROC(0); FERM_ZEROC(1); FERM_ZEROC(2); FERM_ZEROC(3); FERM_ZEROC(4);
  }

  int64_t ak = ak0;
  for (int k = 0; k < K; ++k, ak += acs) {
    const float* br = brows[k] + n0;
    __m512 b0 = (NV == 1) ? _mm512_maskz_loadu_ps(tail, br) : _mm512_loadu_ps(br);
    __m512 b1, b2, b3;
    if constexpr (NV > 1)
      b1 = (NV == 2) ? _mm512_maskz_loadu_ps(tail, br + 16) : _mm512_loadu_ps(br + 16);
    if constexpr (NV > 2)
      b2 = (NV == 3) ? _mm512_maskz_loadu_ps(tail, br + 32) : _mm512_loadu_ps(br + 32);
    if constexpr (NV > 3) b3 = _mm512_maskz_loadu_ps(tail, br + 48);

#define FERM_ROWFMA(r)                                                         \
  do {                                                                         \
    if constexpr (MR > r) {                                                    \
      __m512 av = _mm512_set1_ps(a##r[ak]);                                    \
      c##r##0 = _mm512_fmadd_ps(av, b0, c##r##0);                              \
      if constexpr (NV > 1) c##r##1 = _mm512_fmadd_ps(av, b1, c##r##1);        \
      if constexpr (NV > 2) c##r##2 = _mm512_fmadd_ps(av, b2, c##r##2);        \
      if constexpr (NV > 3) c##r##3 = _mm512_fmadd_ps(av, b3, c##r##3);        \
    }                                                                          \
  } while (0)

    FERM_ROWFMA(0); FERM_ROWFMA(1); FERM_ROWFMA(2); FERM_ROWFMA(3); FERM_ROWFMA(4);
#undef FERM_ROWFMA
  }

  __m512 bias0, bias1, bias2, bias3;
  if (finalize && bias_col) {
    bias0 = _mm512_maskz_loadu_ps(NV == 1 ? tail : static_cast<__mmask16>(0xffff), bias_col + n0);
    if constexpr (NV > 1)
      bias1 = _mm512_maskz_loadu_ps(NV == 2 ? tail : static_cast<__mmask16>(0xffff),
                                    bias_col + n0 + 16);
    if constexpr (NV > 2)
      bias2 = _mm512_maskz_loadu_ps(NV == 3 ? tail : static_cast<__mmask16>(0xffff),
                                    bias_col + n0 + 32);
    if constexpr (NV > 3) bias3 = _mm512_maskz_loadu_ps(tail, bias_col + n0 + 48);
  }

#define FERM_STOREC(r)                                                         \
  do {                                                                         \
    if constexpr (MR > r) {                                                    \
      float* row = c + (r) * ldc + n0;                                         \
      if (finalize) {                                                          \
        if (bias_row) {                                                        \
          __m512 rb = _mm512_set1_ps(bias_row[r]);                             \
          c##r##0 = _mm512_add_ps(c##r##0, rb);                                \
          if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, rb);          \
          if constexpr (NV > 2) c##r##2 = _mm512_add_ps(c##r##2, rb);          \
          if constexpr (NV > 3) c##r##3 = _mm512_add_ps(c##r##3, rb);          \
        }                                                                      \
        if (bias_col) {                                                        \
          c##r##0 = _mm512_add_ps(c##r##0, bias0);                             \
          if constexpr (NV > 1) c##r##1 = _mm512_add_ps(c##r##1, bias1);       \
          if constexpr (NV > 2) c##r##2 = _mm512_add_ps(c##r##2, bias2);       \
          if constexpr (NV > 3) c##r##3 = _mm512_add_ps(c##r##3, bias3);       \
        }                                                                      \
        if (relu) {                                                            \
          __m512 z = _mm512_setzero_ps();                                      \
          c##r##0 = _mm512_max_ps(c##r##0, z);                                 \
          if constexpr (NV > 1) c##r##1 = _mm512_max_ps(c##r##1, z);           \
          if constexpr (NV > 2) c##r##2 = _mm512_max_ps(c##r##2, z);           \
          if constexpr (NV > 3) c##r##3 = _mm512_max_ps(c##r##3, z);           \
        }                                                                      \
      }                                                                        \
      if constexpr (NV == 1) {                                                 \
        _mm512_mask_storeu_ps(row, tail, c##r##0);                             \
      } else {                                                                 \
        _mm512_storeu_ps(row, c##r##0);                                        \
        if constexpr (NV == 2) _mm512_mask_storeu_ps(row + 16, tail, c##r##1); \
        if constexpr (NV > 2) _mm512_storeu_ps(row + 16, c##r##1);             \
        if constexpr (NV == 3) _mm512_mask_storeu_ps(row + 32, tail, c##r##2); \
        if constexpr (NV > 3) {                                                \
          _mm512_storeu_ps(row + 32, c##r##2);                                 \
          _mm512_mask_storeu_ps(row + 48, tail, c##r##3);                      \
        }                                                                      \
      }                                                                        \
    }                                                                          \
  } while (0)

  FERM_STOREC(0); FERM_STOREC(1); FERM_STOREC(2); FERM_STOREC(3); FERM_STOREC(4);
#undef FERM_STOREC
#undef FERM_LOADC
#undef FERM_ZEROC
}

using MicroFn = void (*)(int, const float* const*, int64_t, int64_t,
                         const float* const*, int, float*, int64_t, bool, bool,
                         __mmask16, const float*, const float*, bool);

constexpr MicroFn kMicro6[4] = {&micro6<1>, &micro6<2>, &micro6<3>, &micro6<4>};
constexpr MicroFn kMicro12[2] = {&micro12<1>, &micro12<2>};

template <int MR>
constexpr void fill_edge_row(MicroFn (&t)[5][4]) {
  t[MR - 1][0] = &micro_edge<MR, 1>;
  t[MR - 1][1] = &micro_edge<MR, 2>;
  t[MR - 1][2] = &micro_edge<MR, 3>;
  t[MR - 1][3] = &micro_edge<MR, 4>;
}

constexpr auto make_edge_table() {
  struct Table {
    MicroFn fn[5][4] = {};
  } t{};
  fill_edge_row<1>(t.fn);
  fill_edge_row<2>(t.fn);
  fill_edge_row<3>(t.fn);
  fill_edge_row<4>(t.fn);
  fill_edge_row<5>(t.fn);
  return t;
}

constexpr auto kEdge = make_edge_table();

}  // namespace

void gemm_ptr(const GemmArgs& g) {
  if (g.M <= 0 || g.N <= 0) return;
  bool narrow = g.N <= 32;
  int mr_full = narrow ? 12 : 6;

  // Deep-K panels with genuinely large B (dense layers) re-read B from L2+
  // once per row panel; split K so each B block stays L1-resident across
  // panels. Convolution GEMMs keep B small or overlapping, so they stay
  // unsplit. The epilogue runs only on the final K block.
  int rowb = std::min(g.N, 64) * 4;
  int kblk = g.K;
  if (g.M > mr_full && static_cast<int64_t>(g.K) * rowb >= 262144)
    kblk = std::max(64, 24576 / rowb);

  for (int n0 = 0; n0 < g.N; n0 += 64) {
    int nr = std::min(64, g.N - n0);
    int nv = (nr + 15) / 16;
    int rem = nr - (nv - 1) * 16;
    __mmask16 tail = (rem == 16) ? static_cast<__mmask16>(0xffff)
                                 : static_cast<__mmask16>((1u << rem) - 1u);
    for (int k0 = 0; k0 < g.K; k0 += kblk) {
      int kk = std::min(kblk, g.K - k0);
      bool acc = g.accumulate || k0 > 0;
      bool fin = !g.accumulate && k0 + kk == g.K;
      int64_t ak0 = static_cast<int64_t>(k0) * g.acs;
      const float* const* brows = g.brows + k0;
      int m0 = 0;
      if (narrow) {
        for (; m0 + 12 <= g.M; m0 += 12)
          kMicro12[nv - 1](kk, g.arows + m0, g.acs, ak0, brows, n0,
                           g.c + static_cast<int64_t>(m0) * g.ldc, g.ldc, acc,
                           fin, tail, g.bias_row ? g.bias_row + m0 : nullptr,
                           g.bias_col, g.relu);
      }
      for (; m0 + 6 <= g.M; m0 += 6)
        kMicro6[nv - 1](kk, g.arows + m0, g.acs, ak0, brows, n0,
                        g.c + static_cast<int64_t>(m0) * g.ldc, g.ldc, acc, fin,
                        tail, g.bias_row ? g.bias_row + m0 : nullptr, g.bias_col,
                        g.relu);
      if (m0 < g.M) {
        int mr = g.M - m0;
        kEdge.fn[mr - 1][nv - 1](kk, g.arows + m0, g.acs, ak0, brows, n0,
                                 g.c + static_cast<int64_t>(m0) * g.ldc, g.ldc,
                                 acc, fin, tail,
                                 g.bias_row ? g.bias_row + m0 : nullptr,
                                 g.bias_col, g.relu);
      }
    }
  }
}

#else  // scalar fallback

void gemm_ptr(const GemmArgs& g) {
  for (int m = 0; m < g.M; ++m) {
    float* crow = g.c + static_cast<int64_t>(m) * g.ldc;
    const float* arow = g.arows[m];
    if (!g.accumulate)
      for (int n = 0; n < g.N; ++n) crow[n] = 0.0f;
    for (int k = 0; k < g.K; ++k) {
      float a = arow[k * g.acs];
      const float* brow = g.brows[k];
      for (int n = 0; n < g.N; ++n) crow[n] += a * brow[n];
    }
    if (!g.accumulate) {
      for (int n = 0; n < g.N; ++n) {
        float x = crow[n];
        if (g.bias_row) x += g.bias_row[m];
        if (g.bias_col) x += g.bias_col[n];
        if (g.relu && x < 0.0f) x = 0.0f;
        crow[n] = x;
      }
    }
  }
}

#endif

void gemm_dense(int M, int N, int K, const float* a, int64_t ars, int64_t acs,
                const float* b, int64_t ldb, float* c, int64_t ldc,
                bool accumulate, const float* bias_row, const float* bias_col,
                bool relu) {
  thread_local std::vector<const float*> at, bt;
  at.resize(static_cast<size_t>(M));
  bt.resize(static_cast<size_t>(K));
  for (int m = 0; m < M; ++m) at[static_cast<size_t>(m)] = a + m * ars;
  for (int k = 0; k < K; ++k) bt[static_cast<size_t>(k)] = b + k * ldb;
  GemmArgs g;
  g.M = M;
  g.N = N;
  g.K = K;
  g.arows = at.data();
  g.acs = acs;
  g.brows = bt.data();
  g.c = c;
  g.ldc = ldc;
  g.accumulate = accumulate;
  g.bias_row = bias_row;
  g.bias_col = bias_col;
  g.relu = relu;
  gemm_ptr(g);
}

void transpose_strided_f32(const float* src, int rows, int cols, int64_t src_ld,
                           float* dst, int64_t dst_ld) {
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B) {
    int r1 = std::min(r0 + B, rows);
    for (int c0 = 0; c0 < cols; c0 += B) {
      int c1 = std::min(c0 + B, cols);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          dst[static_cast<int64_t>(c) * dst_ld + r] = src[static_cast<int64_t>(r) * src_ld + c];
    }
  }
}

void transpose_f32(const float* src, int rows, int cols, float* dst) {
  transpose_strided_f32(src, rows, cols, cols, dst, rows);
}

}  // namespace ferm::grad::kern
