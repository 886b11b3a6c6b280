#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace ple::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One mode's local quadratic surrogate
///   L(b) = base_loss + 1/2 (b - beta_star)^T H (b - beta_star).
struct QuadraticMode {
  MatrixXd H;
  VectorXd beta_star;
  double pi = 0.5;
  double base_loss = 0.0;

  // Symmetry to 1e-12, eigenvalues >= -1e-10, pi in [0,1].
  void validate() const;
  double loss(const VectorXd& beta) const;
  VectorXd grad(const VectorXd& beta) const;
};

// Both modes valid, equal dimension, weights summing to one.
void validate_pair(const QuadraticMode& m0, const QuadraticMode& m1);

// pi0 L0(b) + pi1 L1(b)
double dense_objective(const QuadraticMode& m0, const QuadraticMode& m1, const VectorXd& beta);
VectorXd dense_gradient(const QuadraticMode& m0, const QuadraticMode& m1, const VectorXd& beta);
// pi0 L0(b0*) + pi1 L1(b1*): each mode at its own optimum.
double split_objective(const QuadraticMode& m0, const QuadraticMode& m1);

/// (pi0 H0 + pi1 H1)^-1 (pi0 H0 b0* + pi1 H1 b1*). Raises SingularityError when
/// the combined curvature has min eigenvalue <= 1e-10.
VectorXd dense_optimum(const QuadraticMode& m0, const QuadraticMode& m1);

// 1/2 sum_r pi_r (b_dense - b_r*)^T H_r (b_dense - b_r*)
double conflict_gap(const QuadraticMode& m0, const QuadraticMode& m1);

// 1/2 pi0 pi1 db^T H db with db = b1* - b0*
double equal_curvature_gap(const MatrixXd& H, const VectorXd& beta0_star,
                           const VectorXd& beta1_star, double pi0);

struct GradientPair {
  VectorXd g0, g1;
  double pi0 = 0.5, pi1 = 0.5;
};

struct InterferencePrediction {
  bool interferes = false;         // g0.g1 < -(pi0/pi1) |g0|^2
  double first_order_delta = 0.0;  // pi0 |g0|^2 + pi1 g0.g1; L0 moves by -lr * delta
};

// Raises ArgumentError on a zero g0 or a non-positive pi1.
InterferencePrediction interference_predicate(const GradientPair& gp);

struct InterferenceCheck {
  InterferencePrediction prediction;
  double first_order_change = 0.0;  // -lr * delta
  double second_order_bound = 0.0;  // 1/2 lr^2 v^T H0 v, v = pi0 g0 + pi1 g1
  double dense_change = 0.0;        // exact L0 change after one dense step
  bool decisive = false;            // |first order| > bound
  bool sign_matches = true;         // meaningful when decisive
  double split_change = 0.0;        // exact L0 change after the expert step -lr pi0 g0
  double split_bound = 0.0;         // 1/2 lr^2 pi0^2 g0^T H0 g0
};

InterferenceCheck verify_interference_on_quadratic(const QuadraticMode& m0,
                                                   const QuadraticMode& m1,
                                                   const VectorXd& beta, double lr);

struct Dominance {
  double split_value = 0.0;
  double dense_value = 0.0;
  bool dominates = false;  // split <= dense + 1e-12
};

Dominance fixed_backbone_dominance(const QuadraticMode& m0, const QuadraticMode& m1);

// A^T A with Gaussian A (d x d): PSD, almost surely positive definite.
MatrixXd random_psd(std::size_t d, std::mt19937_64& rng);

// Random pair with pi0 drawn from [0.05, 0.95]; shared H when equal_curvature.
std::pair<QuadraticMode, QuadraticMode> random_mode_pair(std::size_t d, std::mt19937_64& rng,
                                                          bool equal_curvature = false);

}  // namespace ple::theory
