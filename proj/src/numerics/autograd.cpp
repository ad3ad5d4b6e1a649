#include "xmatch/autograd.hpp"

#include "xmatch/error.hpp"

namespace xmatch {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var{this, it->second};
  param_nodes_.emplace(&param, nodes_.size());
  Node n;
  n.value = param.value;
  n.needs_grad = recording_ && !param.frozen;
  n.param = &param;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (const Var& v : inputs) {
      if (v.tape != this) throw Error("op inputs recorded on different tapes");
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (!recording_) throw Error("backward() on a forward-only tape");
  if (root.tape != this) throw Error("backward() root belongs to another tape");
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward() root must hold a single value, got " +
                     shape_string(nodes_[root.id].value.shape()));
  }
  grad(root.id)[0] += 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr && !n.param->frozen) {
      auto dst = n.param->grad.data();
      auto src = nodes_[i].grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace xmatch
