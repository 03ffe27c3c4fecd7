#include "adyolo/numcore/tape.hpp"

#include <string>

namespace adyolo {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericalError("leaf value is not finite");
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant value is not finite");
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op_name) {
  if (!value.all_finite()) throw NumericalError(std::string(op_name) + ": non-finite output");
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    check_owned(p);
    node.parents.push_back(p.id());
    node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(p.id())].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  node.op = op_name;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id())].needs_grad;
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v);
  return nodes_[static_cast<std::size_t>(v.id())].value;
}

std::vector<const Tensor*> Tape::operands_of(std::string_view op_name) const {
  std::vector<const Tensor*> out;
  for (const Node& n : nodes_)
    if (n.op && n.op == op_name && !n.parents.empty()) out.push_back(&nodes_[static_cast<std::size_t>(n.parents[0])].value);
  return out;
}

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this tape");
  }
}

std::vector<Tensor> Tape::grad(const Var& loss, std::span<const Var> leaves) {
  check_owned(loss);
  const Tensor& loss_value = value(loss);
  if (loss_value.size() != 1) {
    throw ShapeError("grad: loss must be scalar, got shape " + shape_string(loss_value.shape()));
  }

  std::vector<Tensor> grads(nodes_.size());
  const auto root = static_cast<std::size_t>(loss.id());
  if (nodes_[root].needs_grad) grads[root] = Tensor(loss_value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || grads[i].empty() || !node.backward) continue;
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      const auto pid = static_cast<std::size_t>(node.parents[p]);
      if (!nodes_[pid].needs_grad) continue;
      if (grads[pid].empty()) grads[pid] = Tensor(nodes_[pid].value.shape(), 0.0);
      slots[p] = &grads[pid];
    }
    node.backward(grads[i], slots);
  }

  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) {
    check_owned(leaf);
    Tensor& g = grads[static_cast<std::size_t>(leaf.id())];
    out.push_back(g.empty() ? Tensor(value(leaf).shape(), 0.0) : g);
  }
  return out;
}

}  // namespace adyolo
