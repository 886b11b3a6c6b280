#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ple/numeric/param_vector.hpp"
#include "ple/numeric/tape.hpp"

namespace ple {

/// Lazily binds parameter segments onto a tape. A segment that is never
/// requested never enters the graph, so its gradient stays exactly zero.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ParamVector& params);

  Var operator()(std::size_t segment);
  Var operator()(std::string_view name) { return (*this)(params_->index_of(name)); }

  bool touched(std::size_t segment) const { return vars_[segment].has_value(); }
  const ParamVector& params() const { return *params_; }
  Tape& tape() { return *tape_; }

 private:
  Tape* tape_;
  const ParamVector* params_;
  std::vector<std::optional<Var>> vars_;
};

// A loss builder: records the forward pass on the tape and returns a scalar.
// Batches are captured by the closure.
using LossFn = std::function<Var(Tape&, ParamBinding&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamVector grad;
  // Which segments participated in the forward pass.
  std::vector<bool> touched;
};

ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParamVector& params);

// Forward only, without recording backward closures.
double evaluate_loss(const LossFn& loss_fn, const ParamVector& params);

// Central differences per coordinate.
ParamVector finite_diff_grad(const LossFn& loss_fn, const ParamVector& params, double step);

/// Estimates max |d2L / da db| over `probes` random coordinate pairs drawn
/// from the two (disjoint) segment-name sets, using nested central differences.
double finite_diff_hessian_block(const LossFn& loss_fn, const ParamVector& params,
                                 const std::vector<std::string>& block_a,
                                 const std::vector<std::string>& block_b, double step,
                                 std::size_t probes, std::uint64_t seed);

// max_i |a_i - b_i| / max_i |b_i|, with b the reference. Zero when both vanish.
double max_relative_error(const ParamVector& got, const ParamVector& reference);

}  // namespace ple
