#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xmatch/tensor.hpp"

namespace xmatch {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value; accumulated additively by backward passes
  bool frozen = false;
};

enum class InitKind { kNormal, kZeros, kOnes, kConstant };

// Ordered, name-unique collection of parameters with stable addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  // Registers a new parameter; the init kind is remembered for initialize().
  Parameter& add(const std::string& name, Shape shape, InitKind init, double constant = 0.0);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  // Parameters in registration order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  // Normal(0, stddev) weights, zeros, ones or constants, drawn in
  // registration order from a generator seeded with `seed`.
  void initialize(std::uint64_t seed, double stddev = 0.02);
  void zero_grad();

 private:
  struct Entry {
    std::unique_ptr<Parameter> param;
    InitKind init;
    double constant;
  };
  std::vector<Entry> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace xmatch
