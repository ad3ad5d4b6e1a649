#pragma once

// Dense double-precision inner loops. Every kernel has a portable scalar
// reference implementation and, on x86-64, an AVX2/FMA variant. The variant
// is picked once at startup from CPUID; XMATCH_KERNELS=scalar|avx2 in the
// environment overrides the choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace xmatch::kernels {

enum class Isa { kScalar, kAvx2 };

// Raw kernel entry points. Matrices are row-major and densely packed.
// All gemm variants accumulate into C.
struct KernelTable {
  Isa isa;
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = a + b, out = a * b, out = alpha * x (out may alias an input)
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  // C[n x p] += A[n x k] * B[k x p]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p);
  // C[n x p] += A[n x k] * B[p x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p);
  // C[n x p] += A[k x n]^T * B[k x p]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t n,
                  std::size_t k, std::size_t p);
};

const KernelTable& scalar_table();
// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

// The table used by all tensor operations.
const KernelTable& active();
// Forces a specific variant; throws xmatch::Error if the CPU or build lacks it.
void select(Isa isa);
std::string_view active_name();

// Span front-ends over the active table.
double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void add(std::span<const double> a, std::span<const double> b, std::span<double> out);
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(double alpha, std::span<const double> x, std::span<double> out);
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p);

}  // namespace xmatch::kernels
