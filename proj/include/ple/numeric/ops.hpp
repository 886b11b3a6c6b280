#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ple/numeric/tape.hpp"
#include "ple/types.hpp"

// Differentiable operations recorded on a Tape. Each op checks its input
// shapes and raises DimensionError naming both operands on mismatch.
namespace ple::ops {

enum class Reduction {
  kMean,  // mean over unmasked positions
  kSum,   // sum over unmasked positions
};

Var matmul(Var a, Var b);
// x[T x in] times w^T for a weight stored as [out x in].
Var linear(Var x, Var w);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var silu(Var x);
// Row-wise RMS normalisation over the last dimension, scaled by `gain`.
Var rms_norm(Var x, Var gain);
Var embedding(Var table, std::span<const TokenId> ids);
// Rotary position embedding on [T x d] with positions start..start+T-1.
Var rope(Var x, std::size_t n_heads, double base, std::size_t start_pos = 0);
// Multi-head causal scaled dot-product attention over [T x d] inputs.
Var causal_attention(Var q, Var k, Var v, std::size_t n_heads);
Var softmax_cross_entropy(Var logits, std::span<const TokenId> targets,
                          const std::vector<bool>& mask, Reduction reduction = Reduction::kMean);

}  // namespace ple::ops
