#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "xmatch/autograd.hpp"
#include "xmatch/parameter.hpp"

namespace xmatch {

struct GradCheckOptions {
  double step = 1e-5;
  // Components checked per parameter tensor; 0 checks every component.
  // Sampled components are drawn without replacement from `seed`.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  // max over checked components of |analytic - numeric| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Builds a scalar loss on the given tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

// Compares the tape's analytic gradient of `loss` with respect to every
// non-frozen parameter against central finite differences. Parameter values
// are restored afterwards; parameter gradients are left zeroed.
GradCheckResult grad_check(ParameterSet& params, const LossFn& loss,
                           const GradCheckOptions& options = {});

}  // namespace xmatch
