#pragma once

#include <cstdint>
#include <vector>

#include "ple/model.hpp"
#include "ple/trainer.hpp"

namespace ple::theory {

// Small configuration used by the gradient and Hessian audits.
PleConfig tiny_config();

struct TinyProblem {
  ModelParams params;
  std::vector<ChatExample> no_think;
  std::vector<ChatExample> think;

  std::vector<ChatExample> mixed() const;
};

/// Cloned PLE model on random short examples. With `distinct_experts` both
/// experts are perturbed independently so that no identity holds by symmetry.
TinyProblem make_tiny_problem(std::uint64_t seed, const PleConfig& config = tiny_config(),
                              std::size_t per_mode = 3, bool distinct_experts = true);

// Random short examples (per_mode of each route) over the model's vocabulary.
TinyProblem problem_for(ModelParams params, std::uint64_t seed, std::size_t per_mode = 3);

/// Max relative error of reverse-mode vs central differences on the full
/// objective. With max_coords > 0 only that many random coordinates are
/// differenced (for models too large for a full sweep).
double gradient_oracle_error(const TinyProblem& p, double step = 1e-5, std::size_t max_coords = 0,
                             std::uint64_t seed = 0);

// Largest |gradient| on the inactive expert over both mode-pure batches.
double inactive_expert_gradient(const TinyProblem& p);

// Max |grad full - (pi0 grad L0 + pi1 grad L1)| over all coordinates.
double gradient_decomposition_error(const TinyProblem& p);

struct HessianAudit {
  double beta0_beta1 = 0.0;
  double alpha_beta0 = 0.0;
  double alpha_beta1 = 0.0;
  double beta0_beta0 = 0.0;  // pairs drawn across two disjoint halves of beta0
};

/// Sampled max |d2L/da db| of the full objective over both batches for the
/// four blocks, via nested central differences.
HessianAudit hessian_block_audit(const ModelParams& params, std::span<const ChatExample> batch0,
                                 std::span<const ChatExample> batch1, std::size_t probes,
                                 std::uint64_t seed, double step = 1e-3);

struct LinearizationRow {
  double epsilon = 0.0;
  double gap_norm = 0.0;         // |o1 - o0|
  double prediction_norm = 0.0;  // |J_G (f1 - f0)|
  double residual_norm = 0.0;    // |gap - prediction|
  double relative_residual = 0.0;
};

/// Copies beta0 into beta1 everywhere, then sets the last layer's think
/// expert to beta0 + eps * direction (random, fixed by `seed`) for each eps.
/// The prediction is the directional derivative of the downstream map at the
/// route-0 hidden state, taken by central differences with step `fd_step`.
std::vector<LinearizationRow> linearization_residual(const ModelParams& params,
                                                     std::span<const TokenId> tokens,
                                                     std::span<const double> epsilons,
                                                     std::uint64_t seed, double fd_step = 1e-4);

struct ModeMass {
  std::size_t count = 0;
  double mean_length = 0.0;  // target tokens per example
  std::size_t token_mass = 0;
};

struct LengthMassReport {
  std::array<ModeMass, 2> modes;
  // Share of the dense MLP's token-summed update mass supplied by think targets.
  double dense_think_share = 0.0;
};

LengthMassReport length_mass_report(std::span<const ChatExample> dataset);

struct LengthInvariance {
  bool beta0_bitwise_equal = false;
  double beta0_update_norm_a = 0.0;
  double beta0_update_norm_b = 0.0;
  double beta1_update_norm_a = 0.0;
  double beta1_update_norm_b = 0.0;
};

/// Trains the same PLE start point on two datasets that differ only in think
/// targets (token_sum reduction, backbone fixed, plain SGD) and compares the
/// no-think expert afterwards.
LengthInvariance length_invariance(const ModelParams& start, std::span<const ChatExample> a,
                                   std::span<const ChatExample> b, TrainConfig config);

// Copies of `examples` whose think targets are repeated `factor` times before EOS.
std::vector<ChatExample> stretch_think_targets(std::span<const ChatExample> examples,
                                               std::size_t factor);

}  // namespace ple::theory
