#include "xmatch/kernels.hpp"

namespace xmatch::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(double alpha, const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      c[i * p + j] += dot_scalar(a + i * k, b + j * k, k);
    }
  }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t n,
                    std::size_t k, std::size_t p) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* arow = a + kk * n;
    const double* brow = b + kk * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      Isa::kScalar,   "scalar",       dot_scalar,     sum_scalar,
      axpy_scalar,    add_scalar,     mul_scalar,     scale_scalar,
      gemm_nn_scalar, gemm_nt_scalar, gemm_tn_scalar,
  };
  return table;
}

}  // namespace xmatch::kernels
