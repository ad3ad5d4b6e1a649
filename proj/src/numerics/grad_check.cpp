#include "xmatch/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "xmatch/error.hpp"

namespace xmatch {
namespace {

double evaluate(const LossFn& loss) {
  Tape tape(false);
  const Var out = loss(tape);
  if (out.value().size() != 1) throw ShapeError("grad_check: loss must be a single value");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(ParameterSet& params, const LossFn& loss,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (Parameter* p : params.all()) {
    if (p->frozen) continue;
    const std::size_t n = p->value.size();
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_per_tensor != 0 && options.max_per_tensor < n) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t idx : indices) {
      const double original = p->value[idx];
      p->value[idx] = original + options.step;
      const double up = evaluate(loss);
      p->value[idx] = original - options.step;
      const double down = evaluate(loss);
      p->value[idx] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad[idx];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_parameter = p->name;
        result.worst_index = idx;
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace xmatch
