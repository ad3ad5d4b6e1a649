#pragma once

// Differentiable primitives. Each function evaluates its result on the tape
// of its inputs and records a hand-written backward pass. Broadcasting is
// limited to bias/affine vectors over the last axis and scalar multipliers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xmatch/autograd.hpp"

namespace xmatch::ops {

inline constexpr double kLayerNormEps = 1e-12;
inline constexpr double kBceClamp = 1e-7;

// Elementwise, identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
// x[..., d] + bias[d]
Var add_bias(Var x, Var bias);
// x * s where s holds a single value.
Var mul_scalar(Var x, Var s);

Var matmul(Var a, Var b);     // [n x k] . [k x p]
Var matmul_nt(Var a, Var b);  // [n x k] . [p x k]^T
Var transpose(Var x);
// x[n x in] . weight[in x out] + bias[out]
Var linear(Var x, Var weight, Var bias);

// x * Phi(x) with the exact Gaussian CDF.
Var gelu(Var x);
Var sigmoid(Var x);
Var exp(Var x);
// Gradient passes only where lo < x < hi.
Var clamp(Var x, double lo, double hi);

// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);
// Row softmax of a [n x m] score matrix over the columns whose key_mask
// entry is nonzero; masked columns get exactly zero weight. Throws
// NumericError when every column is masked.
Var masked_softmax(Var scores, std::span<const double> key_mask);

// Normalizes each vector along the last axis, then applies gamma and beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

// softmax(q k^T / sqrt(d) restricted to valid keys) v.
Var attention(Var q, Var k, Var v, std::span<const double> key_mask);

// Rows of table[V x d] selected by ids; throws ShapeError on an id >= V.
Var embedding_lookup(Var table, std::span<const std::int32_t> ids);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);

Var sum(Var x);
Var mean(Var x);
// [n x d] -> [1 x d], average over rows with nonzero mask.
Var masked_mean_rows(Var x, std::span<const double> mask);
// Each row divided by its Euclidean norm.
Var l2_normalize_rows(Var x);

// Mean binary cross-entropy of probabilities p (clamped to
// [kBceClamp, 1 - kBceClamp]) against labels in {0, 1}.
Var bce_loss(Var p, std::span<const double> labels);
// Mean over rows of -log softmax(logits[i])[targets[i]].
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);
// Symmetric cross-entropy of a square logit matrix whose diagonal holds the
// matched pairs: the average of the row-wise and column-wise losses.
// Throws ShapeError for fewer than two pairs.
Var contrastive_loss(Var logits);

double gelu_value(double x);

}  // namespace xmatch::ops
