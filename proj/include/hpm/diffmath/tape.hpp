#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "hpm/diffmath/tensor.hpp"

namespace hpm::diff {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to a backward rule while the tape is replayed.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Tensor& out_value() const;
  const Tensor& out_grad() const;
  const Tensor& in_value(std::size_t k) const;
  bool in_needs_grad(std::size_t k) const;
  /// Gradient buffer for input k, zero-initialized on first access.
  Tensor& in_grad(std::size_t k);

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardRule = std::function<void(BackwardContext&)>;

/// Records primitive applications in execution order and replays them in reverse.
///
/// Nodes are appended only after their inputs exist, so the node list is always
/// a topological order. A tape constructed with `record = false` evaluates
/// values but stores no backward rules; that is the no-grad mode used for
/// teacher inference.
///
/// backward() rebuilds node gradients from scratch each call and *adds* leaf
/// gradients into the bound Parameter::grad. Callers reset parameter
/// gradients between steps.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf bound to p. The tape reads p.value in place; p must outlive the tape.
  Var param(Parameter& p);

  /// Appends an op node. The rule is dropped when no input needs a gradient.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardRule rule);

  void backward(Var root);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Node gradient from the most recent backward(); empty if the node was not reached.
  const Tensor& grad(Var v) const { return grads_.at(v.id()); }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    bool requires_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
};

/// Test hook: negates the incoming gradient of every node whose op name
/// matches, simulating a sign error in that backward rule. Empty disables.
void inject_backward_fault(const std::string& op);

}  // namespace hpm::diff
