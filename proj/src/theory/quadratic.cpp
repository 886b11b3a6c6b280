#include "ple/theory/quadratic.hpp"

#include <cmath>
#include <string>

#include "ple/error.hpp"

namespace ple::theory {
namespace {

double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

void QuadraticMode::validate() const {
  if (H.rows() != H.cols() || H.rows() != beta_star.size()) {
    throw DimensionError("quadratic mode: H is " + std::to_string(H.rows()) + "x" +
                         std::to_string(H.cols()) + ", beta_star has " +
                         std::to_string(beta_star.size()) + " entries");
  }
  if (!H.allFinite() || !beta_star.allFinite() || !std::isfinite(base_loss)) {
    throw NumericError("quadratic mode has non-finite entries");
  }
  const double asym = (H - H.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12) throw ArgumentError("H is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  if (H.rows() > 0) {
    const double lo = min_eigenvalue(H);
    if (lo < -1e-10) throw ArgumentError("H is not PSD (min eigenvalue " + std::to_string(lo) + ")");
  }
  if (!(pi >= 0.0 && pi <= 1.0)) throw ArgumentError("mode weight pi must lie in [0, 1]");
}

double QuadraticMode::loss(const VectorXd& beta) const {
  const VectorXd d = beta - beta_star;
  return base_loss + 0.5 * d.dot(H * d);
}

VectorXd QuadraticMode::grad(const VectorXd& beta) const { return H * (beta - beta_star); }

void validate_pair(const QuadraticMode& m0, const QuadraticMode& m1) {
  m0.validate();
  m1.validate();
  if (m0.beta_star.size() != m1.beta_star.size()) {
    throw DimensionError("modes have dimensions " + std::to_string(m0.beta_star.size()) + " and " +
                         std::to_string(m1.beta_star.size()));
  }
  if (std::abs(m0.pi + m1.pi - 1.0) > 1e-12) {
    throw ArgumentError("mode weights sum to " + std::to_string(m0.pi + m1.pi) + ", not 1");
  }
}

double dense_objective(const QuadraticMode& m0, const QuadraticMode& m1, const VectorXd& beta) {
  return m0.pi * m0.loss(beta) + m1.pi * m1.loss(beta);
}

VectorXd dense_gradient(const QuadraticMode& m0, const QuadraticMode& m1, const VectorXd& beta) {
  return m0.pi * m0.grad(beta) + m1.pi * m1.grad(beta);
}

double split_objective(const QuadraticMode& m0, const QuadraticMode& m1) {
  return m0.pi * m0.base_loss + m1.pi * m1.base_loss;
}

VectorXd dense_optimum(const QuadraticMode& m0, const QuadraticMode& m1) {
  validate_pair(m0, m1);
  const MatrixXd A = m0.pi * m0.H + m1.pi * m1.H;
  const double lo = min_eigenvalue(A);
  if (!(lo > 1e-10)) {
    throw SingularityError("combined curvature pi0 H0 + pi1 H1 is singular (min eigenvalue " +
                           std::to_string(lo) + ")");
  }
  const VectorXd rhs = m0.pi * (m0.H * m0.beta_star) + m1.pi * (m1.H * m1.beta_star);
  return A.ldlt().solve(rhs);
}

double conflict_gap(const QuadraticMode& m0, const QuadraticMode& m1) {
  const VectorXd b = dense_optimum(m0, m1);
  const VectorXd d0 = b - m0.beta_star;
  const VectorXd d1 = b - m1.beta_star;
  return 0.5 * (m0.pi * d0.dot(m0.H * d0) + m1.pi * d1.dot(m1.H * d1));
}

double equal_curvature_gap(const MatrixXd& H, const VectorXd& beta0_star,
                           const VectorXd& beta1_star, double pi0) {
  QuadraticMode probe{H, beta0_star, pi0, 0.0};
  probe.validate();
  if (beta1_star.size() != beta0_star.size()) throw DimensionError("optima differ in dimension");
  const VectorXd db = beta1_star - beta0_star;
  return 0.5 * pi0 * (1.0 - pi0) * db.dot(H * db);
}

InterferencePrediction interference_predicate(const GradientPair& gp) {
  if (gp.g0.size() != gp.g1.size()) throw DimensionError("g0 and g1 differ in dimension");
  const double n0 = gp.g0.squaredNorm();
  if (n0 == 0.0 || !(gp.pi1 > 0.0)) {
    throw ArgumentError("interference criterion needs a nonzero g0 and pi1 > 0");
  }
  const double dot = gp.g0.dot(gp.g1);
  InterferencePrediction p;
  p.interferes = dot < -(gp.pi0 / gp.pi1) * n0;
  p.first_order_delta = gp.pi0 * n0 + gp.pi1 * dot;
  return p;
}

InterferenceCheck verify_interference_on_quadratic(const QuadraticMode& m0,
                                                   const QuadraticMode& m1,
                                                   const VectorXd& beta, double lr) {
  validate_pair(m0, m1);
  const VectorXd g0 = m0.grad(beta);
  const VectorXd g1 = m1.grad(beta);
  InterferenceCheck c;
  c.prediction = interference_predicate({g0, g1, m0.pi, m1.pi});
  const VectorXd v = m0.pi * g0 + m1.pi * g1;
  const double before = m0.loss(beta);
  c.first_order_change = -lr * c.prediction.first_order_delta;
  c.second_order_bound = 0.5 * lr * lr * v.dot(m0.H * v);
  c.dense_change = m0.loss(beta - lr * v) - before;
  c.decisive = std::abs(c.first_order_change) > c.second_order_bound;
  c.sign_matches = !c.decisive || (c.dense_change > 0) == (c.first_order_change > 0);
  const VectorXd s = m0.pi * g0;
  c.split_change = m0.loss(beta - lr * s) - before;
  c.split_bound = 0.5 * lr * lr * s.dot(m0.H * s);
  return c;
}

Dominance fixed_backbone_dominance(const QuadraticMode& m0, const QuadraticMode& m1) {
  Dominance d;
  d.split_value = split_objective(m0, m1);
  d.dense_value = dense_objective(m0, m1, dense_optimum(m0, m1));
  d.dominates = d.split_value <= d.dense_value + 1e-12;
  return d;
}

MatrixXd random_psd(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd A(d, d);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = normal(rng);
  }
  MatrixXd H = A.transpose() * A;
  // Exact symmetry: the product is symmetric only up to rounding.
  return 0.5 * (H + H.transpose());
}

std::pair<QuadraticMode, QuadraticMode> random_mode_pair(std::size_t d, std::mt19937_64& rng,
                                                          bool equal_curvature) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  auto vec = [&] {
    VectorXd v(d);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    return v;
  };
  QuadraticMode m0, m1;
  m0.H = random_psd(d, rng);
  m1.H = equal_curvature ? m0.H : random_psd(d, rng);
  m0.beta_star = vec();
  m1.beta_star = vec();
  m0.pi = unif(rng);
  m1.pi = 1.0 - m0.pi;
  m0.base_loss = std::abs(normal(rng));
  m1.base_loss = std::abs(normal(rng));
  return {m0, m1};
}

}  // namespace ple::theory
