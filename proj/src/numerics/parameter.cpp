#include "xmatch/parameter.hpp"

#include <random>

#include "xmatch/error.hpp"

namespace xmatch {

Parameter& ParameterSet::add(const std::string& name, Shape shape, InitKind init, double constant) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  Parameter& ref = *p;
  index_.emplace(name, params_.size());
  params_.push_back(Entry{std::move(p), init, constant});
  return ref;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].param.get();
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].param.get();
}

Parameter& ParameterSet::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ConfigError("unknown parameter: " + name);
  return *p;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : params_) n += e.param->value.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& e : params_) out.push_back(e.param->name);
  return out;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& e : params_) out.push_back(e.param.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& e : params_) out.push_back(e.param.get());
  return out;
}

void ParameterSet::initialize(std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& e : params_) {
    auto data = e.param->value.data();
    switch (e.init) {
      case InitKind::kNormal:
        for (double& v : data) v = normal(rng);
        break;
      case InitKind::kZeros:
        e.param->value.fill(0.0);
        break;
      case InitKind::kOnes:
        e.param->value.fill(1.0);
        break;
      case InitKind::kConstant:
        e.param->value.fill(e.constant);
        break;
    }
    e.param->grad.fill(0.0);
  }
}

void ParameterSet::zero_grad() {
  for (auto& e : params_) e.param->grad.fill(0.0);
}

}  // namespace xmatch
