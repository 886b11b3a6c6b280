#include "ple/numeric/tape.hpp"

#include "ple/error.hpp"

namespace ple {
namespace {

struct FaultState {
  std::string op;
  double scale = 1.0;
};

thread_local FaultState g_fault;

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(const Tensor& external) {
  Node n;
  n.op = "leaf";
  n.external = &external;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
               BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
  Node n;
  n.op = op;
  n.owned = std::move(value);
  if (record_) {
    for (Var in : inputs) n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor(value(v).shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (!record_) throw ArgumentError("backward() on a tape created without recording");
  if (value(loss).size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " +
                         shape_string(value(loss).shape()));
  }
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (!g_fault.op.empty() && n.op == g_fault.op) {
      Tensor scaled = n.grad;
      for (double& x : scaled.data()) x *= g_fault.scale;
      n.backward(*this, scaled);
    } else {
      n.backward(*this, n.grad);
    }
  }
}

ScopedBackwardFault::ScopedBackwardFault(std::string op, double scale)
    : previous_op_(std::move(g_fault.op)), previous_scale_(g_fault.scale) {
  g_fault.op = std::move(op);
  g_fault.scale = scale;
}

ScopedBackwardFault::~ScopedBackwardFault() {
  g_fault.op = std::move(previous_op_);
  g_fault.scale = previous_scale_;
}

}  // namespace ple
