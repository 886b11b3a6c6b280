#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "ple/numeric/tensor.hpp"

namespace ple {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

/// Reverse-mode tape. One tape per forward pass, used by one thread.
///
/// Nodes are appended in evaluation order, so replaying them backwards is a
/// valid topological order. A node only receives a gradient buffer when some
/// consumer propagates into it; parameters that never entered the forward
/// pass therefore end with no gradient at all (reported as exact zeros).
class Tape {
 public:
  // Receives the gradient flowing into the node and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // References `external` without copying; it must outlive the tape.
  Var leaf(const Tensor& external);

  Var push(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient accumulator for `v`, zero-initialised on first access.
  Tensor& grad_buffer(Var v);
  // nullptr when no gradient reached `v`.
  const Tensor* grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

/// Test hook: while alive, every backward step of operation `op` on this
/// thread sees its incoming gradient multiplied by `scale`. Used as the
/// negative control for the gradient oracles.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(std::string op, double scale);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  std::string previous_op_;
  double previous_scale_;
};

}  // namespace ple
