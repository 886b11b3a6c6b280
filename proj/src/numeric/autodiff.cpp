#include "ple/numeric/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ple/error.hpp"

namespace ple {

ParamBinding::ParamBinding(Tape& tape, const ParamVector& params)
    : tape_(&tape), params_(&params), vars_(params.num_segments()) {}

Var ParamBinding::operator()(std::size_t segment) {
  auto& slot = vars_.at(segment);
  if (!slot) slot = tape_->leaf((*params_)[segment]);
  return *slot;
}

ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParamVector& params) {
  Tape tape(true);
  ParamBinding bind(tape, params);
  Var loss = loss_fn(tape, bind);
  if (loss.value().size() != 1) {
    throw DimensionError("loss function returned shape " + shape_string(loss.value().shape()));
  }
  ValueAndGrad out;
  out.value = loss.value().item();
  if (!std::isfinite(out.value)) throw NumericError("non-finite loss");
  tape.backward(loss);
  out.grad = params.zeros_like();
  out.touched.assign(params.num_segments(), false);
  for (std::size_t i = 0; i < params.num_segments(); ++i) {
    if (!bind.touched(i)) continue;
    out.touched[i] = true;
    if (const Tensor* g = tape.grad(bind(i))) out.grad[i] = *g;
  }
  return out;
}

double evaluate_loss(const LossFn& loss_fn, const ParamVector& params) {
  Tape tape(false);
  ParamBinding bind(tape, params);
  return loss_fn(tape, bind).value().item();
}

ParamVector finite_diff_grad(const LossFn& loss_fn, const ParamVector& params, double step) {
  if (!(step > 0)) throw ArgumentError("finite-difference step must be positive");
  ParamVector work = params;
  ParamVector grad = params.zeros_like();
  for (std::size_t s = 0; s < work.num_segments(); ++s) {
    Tensor& seg = work[s];
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const double orig = seg[i];
      seg[i] = orig + step;
      const double up = evaluate_loss(loss_fn, work);
      seg[i] = orig - step;
      const double down = evaluate_loss(loss_fn, work);
      seg[i] = orig;
      grad[s][i] = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

namespace {

std::vector<FlatIndex> coordinates_of(const ParamVector& params,
                                      const std::vector<std::string>& names) {
  std::vector<FlatIndex> coords;
  for (const auto& n : names) {
    const std::size_t s = params.index_of(n);
    for (std::size_t i = 0; i < params[s].size(); ++i) coords.push_back({s, i});
  }
  return coords;
}

}  // namespace

double finite_diff_hessian_block(const LossFn& loss_fn, const ParamVector& params,
                                 const std::vector<std::string>& block_a,
                                 const std::vector<std::string>& block_b, double step,
                                 std::size_t probes, std::uint64_t seed) {
  if (probes < 1) throw ArgumentError("hessian probe count must be at least 1");
  if (!(step > 0)) throw ArgumentError("finite-difference step must be positive");
  for (const auto& a : block_a) {
    if (std::find(block_b.begin(), block_b.end(), a) != block_b.end()) {
      throw ArgumentError("hessian blocks overlap on segment '" + a + "'");
    }
  }
  const auto ca = coordinates_of(params, block_a);
  const auto cb = coordinates_of(params, block_b);
  if (ca.empty() || cb.empty()) throw ArgumentError("hessian block has no coordinates");

  std::mt19937_64 rng(seed);
  ParamVector work = params;
  double worst = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    const FlatIndex a = ca[rng() % ca.size()];
    const FlatIndex b = cb[rng() % cb.size()];
    auto at = [&](double da, double db) {
      const double oa = work[a.segment][a.offset];
      const double ob = work[b.segment][b.offset];
      work[a.segment][a.offset] = oa + da;
      work[b.segment][b.offset] = ob + db;
      const double v = evaluate_loss(loss_fn, work);
      work[a.segment][a.offset] = oa;
      work[b.segment][b.offset] = ob;
      return v;
    };
    const double mixed =
        (at(step, step) - at(step, -step) - at(-step, step) + at(-step, -step)) /
        (4.0 * step * step);
    worst = std::max(worst, std::abs(mixed));
  }
  return worst;
}

double max_relative_error(const ParamVector& got, const ParamVector& reference) {
  if (!got.same_layout(reference)) throw DimensionError("gradient layouts differ");
  double scale = 0.0;
  double diff = 0.0;
  for (std::size_t s = 0; s < got.num_segments(); ++s) {
    for (std::size_t i = 0; i < got[s].size(); ++i) {
      scale = std::max(scale, std::abs(reference[s][i]));
      diff = std::max(diff, std::abs(got[s][i] - reference[s][i]));
    }
  }
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

}  // namespace ple
