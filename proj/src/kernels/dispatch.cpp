#include <atomic>
#include <cstdlib>
#include <string>

#include "xmatch/error.hpp"
#include "xmatch/kernels.hpp"

namespace xmatch::kernels {
namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("XMATCH_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2" && cpu_supports(Isa::kAvx2)) return avx2_table();
  }
  if (cpu_supports(Isa::kAvx2)) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{pick_default()};
  return table;
}

}  // namespace

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (!cpu_supports(isa)) throw Error("requested kernel variant is not available on this CPU/build");
  current().store(isa == Isa::kAvx2 ? avx2_table() : &scalar_table());
}

std::string_view active_name() { return active().name; }

namespace {
void require_len(std::size_t got, std::size_t want) {
  if (got < want) throw Error("kernel span shorter than requested extent");
}
}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  require_len(b.size(), a.size());
  return active().dot(a.data(), b.data(), a.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_len(y.size(), x.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void add(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  require_len(b.size(), a.size());
  require_len(out.size(), a.size());
  active().add(a.data(), b.data(), out.data(), a.size());
}

void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  require_len(b.size(), a.size());
  require_len(out.size(), a.size());
  active().mul(a.data(), b.data(), out.data(), a.size());
}

void scale(double alpha, std::span<const double> x, std::span<double> out) {
  require_len(out.size(), x.size());
  active().scale(alpha, x.data(), out.data(), x.size());
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p) {
  require_len(a.size(), n * k);
  require_len(b.size(), k * p);
  require_len(c.size(), n * p);
  active().gemm_nn(a.data(), b.data(), c.data(), n, k, p);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p) {
  require_len(a.size(), n * k);
  require_len(b.size(), p * k);
  require_len(c.size(), n * p);
  active().gemm_nt(a.data(), b.data(), c.data(), n, k, p);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t p) {
  require_len(a.size(), k * n);
  require_len(b.size(), k * p);
  require_len(c.size(), n * p);
  active().gemm_tn(a.data(), b.data(), c.data(), n, k, p);
}

}  // namespace xmatch::kernels
