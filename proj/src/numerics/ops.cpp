#include "xmatch/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "xmatch/error.hpp"
#include "xmatch/kernels.hpp"

namespace xmatch::ops {
namespace {

namespace k = xmatch::kernels;

template <typename Msg>
void require(bool ok, Msg&& what) {
  if (!ok) throw ShapeError(what());
}

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = vars.begin()->tape;
  for (const Var& v : vars) {
    if (v.tape != t || t == nullptr) throw Error("op inputs recorded on different tapes");
  }
  return *t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), [&] {
    return std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
             " vs " + shape_string(b.shape());
  });
}

void require_matrix(const Var& a, const char* op) {
  require(a.value().rank() == 2, [&] {
    return std::string(op) + ": expected a matrix, got " + shape_string(a.shape());
  });
}

// Accumulates src into the gradient of node `id` when it participates.
void accumulate(Tape& t, std::size_t id, std::span<const double> src) {
  if (t.needs_grad(id)) k::axpy(1.0, src, t.grad(id).data());
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), [&] { return "axis " + std::to_string(axis) + " out of range for " +
                                   shape_string(shape); });
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double gelu_value(double x) { return x * 0.5 * std::erfc(-x / std::numbers::sqrt2); }

Var add(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  k::add(a.value().data(), b.value().data(), out.data());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad(self).data());
    accumulate(t, ib, t.grad(self).data());
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto av = a.value().data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad(self).data());
    if (t.needs_grad(ib)) k::axpy(-1.0, t.grad(self).data(), t.grad(ib).data());
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  k::mul(a.value().data(), b.value().data(), out.data());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor tmp(g.shape());
    if (t.needs_grad(ia)) {
      k::mul(g.data(), t.value(ib).data(), tmp.data());
      k::axpy(1.0, tmp.data(), t.grad(ia).data());
    }
    if (t.needs_grad(ib)) {
      k::mul(g.data(), t.value(ia).data(), tmp.data());
      k::axpy(1.0, tmp.data(), t.grad(ib).data());
    }
  });
}

Var scale(Var x, double factor) {
  Tape& t = tape_of({x});
  Tensor out(x.shape());
  k::scale(factor, x.value().data(), out.data());
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, factor](Tape& t, std::size_t self) {
    if (t.needs_grad(ix)) k::axpy(factor, t.grad(self).data(), t.grad(ix).data());
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = tape_of({x, bias});
  const std::size_t d = last_dim(x.value());
  require(bias.value().rank() == 1 && bias.value().size() == d, [&] {
    return "add_bias: bias " + shape_string(bias.shape()) + " does not match " +
             shape_string(x.shape());
  });
  Tensor out = x.value();
  const std::size_t rows = out.size() / d;
  auto bv = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) k::axpy(1.0, bv, out.data().subspan(r * d, d));
  const std::size_t ix = x.id, ib = bias.id;
  return t.push(std::move(out), {x, bias}, [ix, ib, d, rows](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, ix, g.data());
    if (t.needs_grad(ib)) {
      auto gb = t.grad(ib).data();
      for (std::size_t r = 0; r < rows; ++r) k::axpy(1.0, g.data().subspan(r * d, d), gb);
    }
  });
}

Var mul_scalar(Var x, Var s) {
  Tape& t = tape_of({x, s});
  require(s.value().size() == 1, [&] { return "mul_scalar: multiplier must hold one value, got " +
                                     shape_string(s.shape()); });
  const double sv = s.value()[0];
  Tensor out(x.shape());
  k::scale(sv, x.value().data(), out.data());
  const std::size_t ix = x.id, is = s.id;
  return t.push(std::move(out), {x, s}, [ix, is](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ix)) k::axpy(t.value(is)[0], g.data(), t.grad(ix).data());
    if (t.needs_grad(is)) t.grad(is)[0] += k::dot(g.data(), t.value(ix).data());
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.value().rows(), kk = a.value().cols(), p = b.value().cols();
  require(b.value().rows() == kk, [&] {
    return "matmul: inner extents differ " + shape_string(a.shape()) +
             " . " + shape_string(b.shape());
  });
  Tensor out({n, p});
  k::gemm_nn(a.value().data(), b.value().data(), out.data(), n, kk, p);
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), {a, b}, [ia, ib, n, kk, p](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = dC B^T, dB = A^T dC
    if (t.needs_grad(ia)) k::gemm_nt(g.data(), t.value(ib).data(), t.grad(ia).data(), n, p, kk);
    if (t.needs_grad(ib)) k::gemm_tn(t.value(ia).data(), g.data(), t.grad(ib).data(), kk, n, p);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.value().rows(), kk = a.value().cols(), p = b.value().rows();
  require(b.value().cols() == kk, [&] {
    return "matmul_nt: inner extents differ " + shape_string(a.shape()) +
             " . " + shape_string(b.shape()) + "^T";
  });
  Tensor out({n, p});
  k::gemm_nt(a.value().data(), b.value().data(), out.data(), n, kk, p);
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), {a, b}, [ia, ib, n, kk, p](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = dC B, dB = dC^T A
    if (t.needs_grad(ia)) k::gemm_nn(g.data(), t.value(ib).data(), t.grad(ia).data(), n, p, kk);
    if (t.needs_grad(ib)) k::gemm_tn(g.data(), t.value(ia).data(), t.grad(ib).data(), p, n, kk);
  });
}

Var transpose(Var x) {
  Tape& t = tape_of({x});
  require_matrix(x, "transpose");
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out({c, r});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, r, c](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = tape_of({x, weight, bias});
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const std::size_t n = x.value().rows(), in = x.value().cols(), out_dim = weight.value().cols();
  require(weight.value().rows() == in, [&] {
    return "linear: weight " + shape_string(weight.shape()) +
             " does not accept input " + shape_string(x.shape());
  });
  require(bias.value().rank() == 1 && bias.value().size() == out_dim, [&] {
    return "linear: bias " + shape_string(bias.shape()) + " does not match output width " +
             std::to_string(out_dim);
  });
  Tensor out({n, out_dim});
  auto bv = bias.value().data();
  for (std::size_t r = 0; r < n; ++r) std::copy(bv.begin(), bv.end(), out.row(r).begin());
  k::gemm_nn(x.value().data(), weight.value().data(), out.data(), n, in, out_dim);
  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  return t.push(std::move(out), {x, weight, bias},
                [ix, iw, ib, n, in, out_dim](Tape& t, std::size_t self) {
                  const Tensor& g = t.grad(self);
                  if (t.needs_grad(ix))
                    k::gemm_nt(g.data(), t.value(iw).data(), t.grad(ix).data(), n, out_dim, in);
                  if (t.needs_grad(iw))
                    k::gemm_tn(t.value(ix).data(), g.data(), t.grad(iw).data(), in, n, out_dim);
                  if (t.needs_grad(ib)) {
                    auto gb = t.grad(ib).data();
                    for (std::size_t r = 0; r < n; ++r) k::axpy(1.0, g.row(r), gb);
                  }
                });
}

Var gelu(Var x) {
  Tape& t = tape_of({x});
  Tensor out(x.shape());
  auto xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    auto g = t.grad(self).data();
    auto xv = t.value(ix).data();
    auto gx = t.grad(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * std::erfc(-v / std::numbers::sqrt2);
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(Var x) {
  Tape& t = tape_of({x});
  Tensor out(x.shape());
  auto xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xv[i]);
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    auto g = t.grad(self).data();
    auto y = t.value(self).data();
    auto gx = t.grad(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var x) {
  Tape& t = tape_of({x});
  Tensor out(x.shape());
  auto xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    auto g = t.grad(self).data();
    auto y = t.value(self).data();
    auto gx = t.grad(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  });
}

Var clamp(Var x, double lo, double hi) {
  Tape& t = tape_of({x});
  require(lo <= hi, [&] { return "clamp: lo > hi"; });
  Tensor out(x.shape());
  auto xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, lo, hi](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    auto g = t.grad(self).data();
    auto xv = t.value(ix).data();
    auto gx = t.grad(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
    }
  });
}

Var softmax(Var x, std::size_t axis) {
  Tape& t = tape_of({x});
  const AxisSplit s = split_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) out[base + j * s.inner] /= total;
    }
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, s](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dotp = 0.0;
        for (std::size_t j = 0; j < s.extent; ++j) {
          dotp += y[base + j * s.inner] * g[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dotp);
        }
      }
    }
  });
}

Var masked_softmax(Var scores, std::span<const double> key_mask) {
  Tape& t = tape_of({scores});
  require_matrix(scores, "masked_softmax");
  const Tensor& sv = scores.value();
  const std::size_t n = sv.rows(), m = sv.cols();
  require(key_mask.size() == m, [&] {
    return "masked_softmax: mask length " + std::to_string(key_mask.size()) +
             " does not match " + std::to_string(m) + " keys";
  });
  std::vector<std::size_t> valid;
  for (std::size_t j = 0; j < m; ++j) {
    if (key_mask[j] != 0.0) valid.push_back(j);
  }
  if (valid.empty()) throw NumericError("attention over an all-masked key set is undefined");
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = sv.row(r);
    auto orow = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j : valid) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j : valid) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j : valid) orow[j] /= total;
  }
  const std::size_t is = scores.id;
  return t.push(std::move(out), {scores}, [is, n](Tape& t, std::size_t self) {
    if (!t.needs_grad(is)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gs = t.grad(is);
    for (std::size_t r = 0; r < n; ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      const double dotp = k::dot(yr, gr);
      auto out = gs.row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - dotp);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of({x, gamma, beta});
  const std::size_t d = last_dim(x.value());
  const bool affine_ok =
      gamma.value().rank() == 1 && gamma.value().size() == d && beta.shape() == gamma.shape();
  require(affine_ok, [&] {
    return "layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" +
             shape_string(beta.shape()) + " do not match " + shape_string(x.shape());
  });
  const Tensor& xv = x.value();
  const std::size_t rows = xv.size() / d;
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> rstd(rows);
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.data().subspan(r * d, d);
    const double mu = k::sum(in) / static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return t.push(std::move(out), {x, gamma, beta},
                [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
                    Tape& t, std::size_t self) {
                  const Tensor& g = t.grad(self);
                  if (t.needs_grad(ig)) {
                    auto gg = t.grad(ig).data();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                  }
                  if (t.needs_grad(ib)) {
                    auto gb = t.grad(ib).data();
                    for (std::size_t r = 0; r < rows; ++r) {
                      k::axpy(1.0, g.data().subspan(r * d, d), gb);
                    }
                  }
                  if (t.needs_grad(ix)) {
                    auto gv = t.value(ig).data();
                    auto gx = t.grad(ix).data();
                    std::vector<double> dxhat(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[r * d + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                      }
                      mean_d /= static_cast<double>(d);
                      mean_dx /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                      }
                    }
                  }
                });
}

Var attention(Var q, Var k, Var v, std::span<const double> key_mask) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  require(q.value().cols() == k.value().cols(), [&] {
    return "attention: query/key widths differ";
  });
  require(k.value().rows() == v.value().rows(), [&] {
    return "attention: key/value counts differ";
  });
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  Var weights = masked_softmax(scale(matmul_nt(q, k), inv_sqrt_d), key_mask);
  return matmul(weights, v);
}

Var embedding_lookup(Var table, std::span<const std::int32_t> ids) {
  Tape& t = tape_of({table});
  require_matrix(table, "embedding_lookup");
  require(!ids.empty(), [&] { return "embedding_lookup: empty id sequence"; });
  const std::size_t vocab = table.value().rows(), d = table.value().cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id;
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [it, idv = std::move(idv)](Tape& t, std::size_t self) {
    if (!t.needs_grad(it)) return;
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(it);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      k::axpy(1.0, g.row(i), gt.row(static_cast<std::size_t>(idv[i])));
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), [&] { return "concat: no inputs"; });
  Tape& t = *parts.front().tape;
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  require(axis < first.size(), [&] {
    return "concat: axis out of range for " + shape_string(first);
  });
  out_shape[axis] = 0;
  std::vector<std::size_t> chunk(parts.size());
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (parts[p].tape != &t) throw Error("op inputs recorded on different tapes");
    require(s.size() == first.size(), [&] { return "concat: rank mismatch"; });
    for (std::size_t i = 0; i < s.size(); ++i) {
      require(i == axis || s[i] == first[i], [&] {
        return "concat: extents differ off the concat axis: " +
                 shape_string(s) + " vs " + shape_string(first);
      });
    }
    out_shape[axis] += s[axis];
    chunk[p] = s[axis] * inner;
  }
  Tensor out(out_shape);
  const std::size_t row = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk[p]), chunk[p],
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += chunk[p];
  }
  std::vector<std::size_t> ids;
  for (const Var& v : parts) ids.push_back(v.id);
  // push() inspects its initializer list for needs_grad; pass the first
  // gradient-carrying input so the closure is kept when any input needs it.
  Var carrier = parts.front();
  for (const Var& v : parts) {
    if (t.needs_grad(v.id)) {
      carrier = v;
      break;
    }
  }
  return t.push(std::move(out), {carrier},
                [ids = std::move(ids), chunk = std::move(chunk), outer, row](Tape& t,
                                                                          std::size_t self) {
                  const Tensor& g = t.grad(self);
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < ids.size(); ++p) {
                    if (t.needs_grad(ids[p])) {
                      auto dst = t.grad(ids[p]).data();
                      for (std::size_t o = 0; o < outer; ++o) {
                        k::axpy(1.0, g.data().subspan(o * row + offset, chunk[p]),
                                dst.subspan(o * chunk[p], chunk[p]));
                      }
                    }
                    offset += chunk[p];
                  }
                });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  Tape& t = tape_of({x});
  const AxisSplit s = split_axis(x.shape(), axis);
  require(length > 0 && start + length <= s.extent, [&] {
    return "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
             ") outside axis of extent " + std::to_string(s.extent);
  });
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t src_row = s.extent * s.inner, dst_row = length * s.inner;
  auto src = x.value().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * src_row + start * s.inner), dst_row,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * dst_row));
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x},
                [ix, s, start, src_row, dst_row](Tape& t, std::size_t self) {
                  if (!t.needs_grad(ix)) return;
                  const Tensor& g = t.grad(self);
                  auto gx = t.grad(ix).data();
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    k::axpy(1.0, g.data().subspan(o * dst_row, dst_row),
                            gx.subspan(o * src_row + start * s.inner, dst_row));
                  }
                });
}

Var sum(Var x) {
  Tape& t = tape_of({x});
  Tensor out = Tensor::scalar(k::sum(x.value().data()));
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ix).data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var masked_mean_rows(Var x, std::span<const double> mask) {
  Tape& t = tape_of({x});
  require_matrix(x, "masked_mean_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  require(mask.size() == n, [&] { return "masked_mean_rows: mask length differs from row count"; });
  std::vector<double> weights(n, 0.0);
  double count = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (mask[r] != 0.0) count += 1.0;
  }
  if (count == 0.0) throw NumericError("masked mean over an all-masked set is undefined");
  for (std::size_t r = 0; r < n; ++r) weights[r] = mask[r] != 0.0 ? 1.0 / count : 0.0;
  Tensor out({1, d});
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] != 0.0) k::axpy(weights[r], x.value().row(r), out.data());
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, n, weights = std::move(weights)](Tape& t,
                                                                           std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t r = 0; r < n; ++r) {
      if (weights[r] != 0.0) k::axpy(weights[r], g.data(), gx.row(r));
    }
  });
}

Var l2_normalize_rows(Var x) {
  Tape& t = tape_of({x});
  require_matrix(x, "l2_normalize_rows");
  const std::size_t n = x.value().rows();
  Tensor out = x.value();
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    norms[r] = std::sqrt(k::dot(row, row));
    if (norms[r] == 0.0) throw NumericError("cannot normalize a zero vector");
    k::scale(1.0 / norms[r], row, row);
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), {x}, [ix, n, norms = std::move(norms)](Tape& t,
                                                                       std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t r = 0; r < n; ++r) {
      const double proj = k::dot(y.row(r), g.row(r));
      auto out = gx.row(r);
      auto yr = y.row(r);
      auto gr = g.row(r);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += (gr[j] - yr[j] * proj) / norms[r];
    }
  });
}

Var bce_loss(Var p, std::span<const double> labels) {
  Tape& t = tape_of({p});
  const std::size_t n = p.value().size();
  require(labels.size() == n, [&] {
    return "bce_loss: " + std::to_string(labels.size()) + " labels for " +
             std::to_string(n) + " predictions";
  });
  double total = 0.0;
  auto pv = p.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw Error("bce_loss: labels must be 0 or 1");
    const double pc = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
    total += y == 1.0 ? -std::log(pc) : -std::log(1.0 - pc);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  const std::size_t ip = p.id;
  std::vector<double> lv(labels.begin(), labels.end());
  return t.push(std::move(out), {p}, [ip, n, lv = std::move(lv)](Tape& t, std::size_t self) {
    if (!t.needs_grad(ip)) return;
    const double g = t.grad(self)[0] / static_cast<double>(n);
    auto pv = t.value(ip).data();
    auto gp = t.grad(ip).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double pc = pv[i];
      if (pc <= kBceClamp || pc >= 1.0 - kBceClamp) continue;
      gp[i] += g * (lv[i] == 1.0 ? -1.0 / pc : 1.0 / (1.0 - pc));
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
  Tape& t = tape_of({logits});
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t n = logits.value().rows(), c = logits.value().cols();
  require(targets.size() == n, [&] {
    return "softmax_cross_entropy: target count differs from row count";
  });
  Tensor probs({n, c});
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < c, [&] { return "softmax_cross_entropy: target out of range"; });
    auto row = logits.value().row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs.at(r, j) = std::exp(row[j] - mx);
      z += probs.at(r, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(r, j) /= z;
    total += std::log(z) - (row[targets[r]] - mx);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  const std::size_t il = logits.id;
  std::vector<std::size_t> tv(targets.begin(), targets.end());
  return t.push(std::move(out), {logits},
                [il, n, probs = std::move(probs), tv = std::move(tv)](Tape& t, std::size_t self) {
                  if (!t.needs_grad(il)) return;
                  const double g = t.grad(self)[0] / static_cast<double>(n);
                  Tensor& gl = t.grad(il);
                  for (std::size_t r = 0; r < n; ++r) {
                    k::axpy(g, probs.row(r), gl.row(r));
                    gl.at(r, tv[r]) -= g;
                  }
                });
}

Var contrastive_loss(Var logits) {
  require_matrix(logits, "contrastive_loss");
  const std::size_t n = logits.value().rows();
  require(logits.value().cols() == n, [&] {
    return "contrastive_loss: logit matrix must be square";
  });
  require(n >= 2, [&] { return "contrastive_loss: needs at least two pairs"; });
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  Var text_to_image = softmax_cross_entropy(logits, diag);
  Var image_to_text = softmax_cross_entropy(transpose(logits), diag);
  return scale(add(text_to_image, image_to_text), 0.5);
}

}  // namespace xmatch::ops
