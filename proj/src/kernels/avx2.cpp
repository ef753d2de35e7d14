// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "mtlface/kernels/kernels.hpp"

namespace mtlface::kernels {
namespace {

constexpr int kMc = 96;
constexpr int kKc = 256;
constexpr int kNc = 2048;

template <typename T>
inline T op_at(bool trans, const T* m, int ld, int row, int col) {
  return trans ? m[static_cast<std::ptrdiff_t>(col) * ld + row]
               : m[static_cast<std::ptrdiff_t>(row) * ld + col];
}

// Packs op(A)[ic:ic+mc, pc:pc+kc] into MR-row panels laid out [panel][p][MR],
// pre-scaled by alpha and zero padded.
template <typename T, int MR>
void pack_a(bool trans, const T* a, int lda, int ic, int pc, int mc, int kc,
            T alpha, T* out) {
  for (int ir = 0; ir < mc; ir += MR) {
    const int mr = std::min(MR, mc - ir);
    for (int p = 0; p < kc; ++p) {
      for (int i = 0; i < mr; ++i)
        out[i] = alpha * op_at(trans, a, lda, ic + ir + i, pc + p);
      for (int i = mr; i < MR; ++i) out[i] = T(0);
      out += MR;
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into NR-column panels laid out [panel][p][NR].
template <typename T, int NR>
void pack_b(bool trans, const T* b, int ldb, int pc, int jc, int kc, int nc,
            T* out) {
  for (int jr = 0; jr < nc; jr += NR) {
    const int nr = std::min(NR, nc - jr);
    for (int p = 0; p < kc; ++p) {
      if (!trans && nr == NR) {
        const T* src = b + static_cast<std::ptrdiff_t>(pc + p) * ldb + jc + jr;
        std::copy(src, src + NR, out);
      } else {
        for (int j = 0; j < nr; ++j)
          out[j] = op_at(trans, b, ldb, pc + p, jc + jr + j);
        for (int j = nr; j < NR; ++j) out[j] = T(0);
      }
      out += NR;
    }
  }
}

// 6x16 single-precision micro-kernel: C[mr,nr] += Apanel * Bpanel.
void micro_f32(int kc, const float* a, const float* b, float* c, int ldc,
               int mr, int nr) {
  __m256 acc[6][2];
#pragma GCC unroll 6
  for (int i = 0; i < 6; ++i) {
    acc[i][0] = _mm256_setzero_ps();
    acc[i][1] = _mm256_setzero_ps();
  }
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(b);
    const __m256 b1 = _mm256_loadu_ps(b + 8);
#pragma GCC unroll 6
    for (int i = 0; i < 6; ++i) {
      const __m256 av = _mm256_broadcast_ss(a + i);
      acc[i][0] = _mm256_fmadd_ps(av, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_ps(av, b1, acc[i][1]);
    }
    a += 6;
    b += 16;
  }
  if (mr == 6 && nr == 16) {
#pragma GCC unroll 6
    for (int i = 0; i < 6; ++i) {
      float* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
      _mm256_storeu_ps(row, _mm256_add_ps(_mm256_loadu_ps(row), acc[i][0]));
      _mm256_storeu_ps(row + 8,
                       _mm256_add_ps(_mm256_loadu_ps(row + 8), acc[i][1]));
    }
    return;
  }
  alignas(32) float tmp[6 * 16];
  for (int i = 0; i < 6; ++i) {
    _mm256_store_ps(tmp + i * 16, acc[i][0]);
    _mm256_store_ps(tmp + i * 16 + 8, acc[i][1]);
  }
  for (int i = 0; i < mr; ++i)
    for (int j = 0; j < nr; ++j)
      c[static_cast<std::ptrdiff_t>(i) * ldc + j] += tmp[i * 16 + j];
}

// 6x8 double-precision micro-kernel.
void micro_f64(int kc, const double* a, const double* b, double* c, int ldc,
               int mr, int nr) {
  __m256d acc[6][2];
#pragma GCC unroll 6
  for (int i = 0; i < 6; ++i) {
    acc[i][0] = _mm256_setzero_pd();
    acc[i][1] = _mm256_setzero_pd();
  }
  for (int p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b);
    const __m256d b1 = _mm256_loadu_pd(b + 4);
#pragma GCC unroll 6
    for (int i = 0; i < 6; ++i) {
      const __m256d av = _mm256_broadcast_sd(a + i);
      acc[i][0] = _mm256_fmadd_pd(av, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_pd(av, b1, acc[i][1]);
    }
    a += 6;
    b += 8;
  }
  alignas(32) double tmp[6 * 8];
  for (int i = 0; i < 6; ++i) {
    _mm256_store_pd(tmp + i * 8, acc[i][0]);
    _mm256_store_pd(tmp + i * 8 + 4, acc[i][1]);
  }
  for (int i = 0; i < mr; ++i)
    for (int j = 0; j < nr; ++j)
      c[static_cast<std::ptrdiff_t>(i) * ldc + j] += tmp[i * 8 + j];
}

template <typename T>
struct MicroKernel;

template <>
struct MicroKernel<float> {
  static constexpr int kMr = 6;
  static constexpr int kNr = 16;
  static void run(int kc, const float* a, const float* b, float* c, int ldc,
                  int mr, int nr) {
    micro_f32(kc, a, b, c, ldc, mr, nr);
  }
};

template <>
struct MicroKernel<double> {
  static constexpr int kMr = 6;
  static constexpr int kNr = 8;
  static void run(int kc, const double* a, const double* b, double* c,
                  int ldc, int mr, int nr) {
    micro_f64(kc, a, b, c, ldc, mr, nr);
  }
};

template <typename T>
void gemm_avx2(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
               const T* a, int lda, const T* b, int ldb, T beta, T* c,
               int ldc) {
  using K = MicroKernel<T>;
  constexpr int MR = K::kMr;
  constexpr int NR = K::kNr;
  if (m <= 0 || n <= 0) return;
  if (beta != T(1)) {
    for (int i = 0; i < m; ++i) {
      T* row = c + static_cast<std::ptrdiff_t>(i) * ldc;
      if (beta == T(0))
        std::fill(row, row + n, T(0));
      else
        for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k <= 0 || alpha == T(0)) return;

  thread_local std::vector<T> a_pack;
  thread_local std::vector<T> b_pack;
  a_pack.resize(static_cast<std::size_t>(kMc + MR) * kKc);
  b_pack.resize(static_cast<std::size_t>(kKc) * (kNc + NR));

  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = std::min(kNc, n - jc);
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = std::min(kKc, k - pc);
      pack_b<T, NR>(trans_b, b, ldb, pc, jc, kc, nc, b_pack.data());
      for (int ic = 0; ic < m; ic += kMc) {
        const int mc = std::min(kMc, m - ic);
        pack_a<T, MR>(trans_a, a, lda, ic, pc, mc, kc, alpha, a_pack.data());
        for (int jr = 0; jr < nc; jr += NR) {
          const int nr = std::min(NR, nc - jr);
          const T* bp = b_pack.data() + static_cast<std::ptrdiff_t>(jr) * kc;
          for (int ir = 0; ir < mc; ir += MR) {
            const int mr = std::min(MR, mc - ir);
            const T* ap = a_pack.data() + static_cast<std::ptrdiff_t>(ir) * kc;
            T* cp = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
            K::run(kc, ap, bp, cp, ldc, mr, nr);
          }
        }
      }
    }
  }
}

// ---- elementwise ----------------------------------------------------------

void axpy_f(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_d(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f(std::size_t n, float alpha, float* x) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void scale_d(std::size_t n, double alpha, double* x) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void add_f(std::size_t n, const float* a, const float* b, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add_d(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_f(std::size_t n, const float* a, const float* b, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_d(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc_f(std::size_t n, const float* a, const float* b, float* y) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i,
                     _mm256_fmadd_ps(_mm256_loadu_ps(a + i),
                                     _mm256_loadu_ps(b + i),
                                     _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void mul_acc_d(std::size_t n, const double* a, const double* b, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i,
                     _mm256_fmadd_pd(_mm256_loadu_pd(a + i),
                                     _mm256_loadu_pd(b + i),
                                     _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

float hsum(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0x55));
  return _mm_cvtss_f32(s);
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  __m128d s = _mm_add_pd(lo, hi);
  s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
  return _mm_cvtsd_f64(s);
}

float dot_f(std::size_t n, const float* x, const float* y) {
  __m256 a0 = _mm256_setzero_ps();
  __m256 a1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
    a1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8),
                         a1);
  }
  for (; i + 8 <= n; i += 8)
    a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
  float acc = hsum(_mm256_add_ps(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_d(std::size_t n, const double* x, const double* y) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                         a1);
  }
  for (; i + 4 <= n; i += 4)
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sum_f(std::size_t n, const float* x) {
  __m256 a0 = _mm256_setzero_ps();
  __m256 a1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_add_ps(a0, _mm256_loadu_ps(x + i));
    a1 = _mm256_add_ps(a1, _mm256_loadu_ps(x + i + 8));
  }
  for (; i + 8 <= n; i += 8) a0 = _mm256_add_ps(a0, _mm256_loadu_ps(x + i));
  float acc = hsum(_mm256_add_ps(a0, a1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

double sum_d(std::size_t n, const double* x) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
    a1 = _mm256_add_pd(a1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void leaky_f(std::size_t n, float slope, const float* x, float* out) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(v, sv), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_d(std::size_t n, double slope, const double* x, double* out) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d pos = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(_mm256_mul_pd(v, sv), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_bwd_f(std::size_t n, float slope, const float* x, const float* dy,
                 float* dx) {
  const __m256 sv = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 g = _mm256_loadu_ps(dy + i);
    const __m256 d = _mm256_blendv_ps(_mm256_mul_ps(g, sv), g, pos);
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), d));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

void leaky_bwd_d(std::size_t n, double slope, const double* x,
                 const double* dy, double* dx) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d pos = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_loadu_pd(dy + i);
    const __m256d d = _mm256_blendv_pd(_mm256_mul_pd(g, sv), g, pos);
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), d));
  }
  for (; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : slope * dy[i];
}

const KernelTable<float> kAvx2F{&gemm_avx2<float>, &axpy_f,  &scale_f,
                                &add_f,            &mul_f,   &mul_acc_f,
                                &dot_f,            &sum_f,   &leaky_f,
                                &leaky_bwd_f};
const KernelTable<double> kAvx2D{&gemm_avx2<double>, &axpy_d,  &scale_d,
                                 &add_d,             &mul_d,   &mul_acc_d,
                                 &dot_d,             &sum_d,   &leaky_d,
                                 &leaky_bwd_d};

}  // namespace

namespace detail {
const KernelTable<float>* avx2_float_table() { return &kAvx2F; }
const KernelTable<double>* avx2_double_table() { return &kAvx2D; }
}  // namespace detail

}  // namespace mtlface::kernels
