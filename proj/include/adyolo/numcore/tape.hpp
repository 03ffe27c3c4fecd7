#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "adyolo/numcore/tensor.hpp"

namespace adyolo {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode gradient tape. A tape is single-owner: build it, call grad(),
// drop it. Independent samples get independent tapes.
class Tape {
 public:
  // Receives d(loss)/d(this node) and one slot per parent; a slot is null
  // when that parent does not lead to any differentiable leaf.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Used by op implementations. Rejects non-finite forward values.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op_name);

  bool requires_grad(const Var& v) const;
  const Tensor& value(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

  // First-operand values of every node recorded under `op_name`, in
  // recording order. Lets diagnostics locate the kinks of piecewise ops.
  std::vector<const Tensor*> operands_of(std::string_view op_name) const;

  // d(loss)/d(leaf) for every requested leaf. Leaves the loss does not reach
  // get an explicit zero tensor. Throws ShapeError for a non-scalar loss.
  std::vector<Tensor> grad(const Var& loss, std::span<const Var> leaves);

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    bool needs_grad = false;
    BackwardFn backward;
    const char* op = nullptr;
  };

  void check_owned(const Var& v) const;

  // deque keeps node addresses stable while recording.
  std::deque<Node> nodes_;
};

}  // namespace adyolo
