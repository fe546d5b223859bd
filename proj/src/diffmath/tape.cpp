#include "hpm/diffmath/tape.hpp"

#include "hpm/error.hpp"

namespace hpm::diff {

namespace {
std::string& fault_op() {
  static std::string op;
  return op;
}
}  // namespace

void inject_backward_fault(const std::string& op) { fault_op() = op; }

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& BackwardContext::out_value() const { return tape_.value(node_); }
const Tensor& BackwardContext::out_grad() const { return tape_.grads_[node_]; }
const Tensor& BackwardContext::in_value(std::size_t k) const {
  return tape_.value(tape_.nodes_[node_].inputs.at(k));
}
bool BackwardContext::in_needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].requires_grad;
}
Tensor& BackwardContext::in_grad(std::size_t k) {
  const std::size_t id = tape_.nodes_[node_].inputs.at(k);
  Tensor& g = tape_.grads_[id];
  if (g.empty()) g = Tensor(tape_.value(id).shape());
  return g;
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.op = "param";
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_ && p.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError(n.op + ": input recorded on a different tape");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.requires_grad = n.requires_grad && record_;
  if (n.requires_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward: root belongs to a different tape");
  if (root.value().size() != 1)
    throw ContractError("backward: root must be a scalar, got shape " +
                        shape_str(root.value().shape()));
  grads_.assign(nodes_.size(), Tensor());
  if (!nodes_[root.id()].requires_grad) return;
  grads_[root.id()] = Tensor(root.value().shape(), 1.0);

  const std::string& fault = fault_op();
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads_[i].empty() || !n.requires_grad) continue;
    if (n.param) {
      Tensor& acc = n.param->grad;
      if (acc.shape() != n.param->value.shape()) acc = Tensor(n.param->value.shape());
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grads_[i][k];
      continue;
    }
    if (!n.rule) continue;
    if (!fault.empty() && n.op == fault)
      for (double& g : grads_[i].values()) g = -g;
    BackwardContext ctx(*this, i);
    n.rule(ctx);
  }
}

}  // namespace hpm::diff
