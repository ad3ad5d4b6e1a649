#pragma once

#include <cstdint>
#include <vector>

#include "xmatch/parameter.hpp"

namespace xmatch {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter in the order of
// the ParameterSet the optimizer was built for. Frozen parameters are left
// untouched (their moments stay zero).
class Adam {
 public:
  Adam(ParameterSet& params, AdamOptions options);

  // One update from the gradients currently stored in the parameters.
  // Gradients are not cleared; call ParameterSet::zero_grad() before the
  // next accumulation.
  void step();

  std::int64_t steps_taken() const { return t_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.lr = lr; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

}  // namespace xmatch
