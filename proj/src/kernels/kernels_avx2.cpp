// Compiled with -mavx2 -mfma when XMATCH_ENABLE_AVX2 is on; the dispatcher
// only hands this table out after checking CPUID.

#include "xmatch/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace xmatch::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_avx2(double alpha, const double* x, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      if (aik == 0.0) continue;
      axpy_avx2(aik, b + kk * p, crow, p);
    }
  }
}

void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      c[i * p + j] += dot_avx2(a + i * k, b + j * k, k);
    }
  }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * n;
    const double* brow = b + kk * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      axpy_avx2(aki, brow, c + i * p, p);
    }
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{
      Isa::kAvx2,   "avx2",       dot_avx2,     sum_avx2,
      axpy_avx2,    add_avx2,     mul_avx2,     scale_avx2,
      gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2,
  };
  return &table;
}

}  // namespace xmatch::kernels

#else

namespace xmatch::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace xmatch::kernels

#endif
