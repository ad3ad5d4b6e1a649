#pragma once

// A Wengert tape over a fixed vocabulary of operations. Each op in ops.hpp
// computes its forward value eagerly and registers a hand-written backward
// closure; Tape::backward replays the closures in reverse order.

#include <cstddef>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "xmatch/parameter.hpp"
#include "xmatch/tensor.hpp"

namespace xmatch {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  // Called during backward with the tape and the id of the node whose
  // gradient is complete; it adds into the gradients of the node's inputs.
  using Backward = std::function<void(Tape&, std::size_t)>;

  // A tape constructed with record_gradients=false only evaluates forward
  // values; backward() on it throws.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Snapshot of the parameter's current value; repeated calls for the same
  // parameter return the same node. On backward, the accumulated gradient is
  // added into param.grad unless the parameter is frozen.
  Var parameter(Parameter& param);

  // Appends an op result. `backward` is dropped when no input needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  // Stable element addresses across push_back.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_;
};

}  // namespace xmatch
