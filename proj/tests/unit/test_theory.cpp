#include <cmath>

#include "doctest.h"
#include "ple/error.hpp"
#include "ple/numeric/tape.hpp"
#include "ple/theory/model_checks.hpp"
#include "ple/theory/quadratic.hpp"
#include "ple/theory/suite.hpp"

using namespace ple;
using namespace ple::theory;

namespace {

QuadraticMode mode(MatrixXd H, VectorXd star, double pi) {
  QuadraticMode m;
  m.H = std::move(H);
  m.beta_star = std::move(star);
  m.pi = pi;
  return m;
}

VectorXd vec(double a, double b) { return (VectorXd(2) << a, b).finished(); }
MatrixXd diag(double a, double b) { return vec(a, b).asDiagonal(); }

// Plain gradient descent on the weighted quadratic, independent of the
// closed-form solve.
VectorXd descend(const QuadraticMode& m0, const QuadraticMode& m1) {
  VectorXd b = VectorXd::Zero(m0.beta_star.size());
  for (int i = 0; i < 20000; ++i) {
    const VectorXd g = m0.pi * m0.H * (b - m0.beta_star) + m1.pi * m1.H * (b - m1.beta_star);
    if (g.norm() < 1e-13) break;
    b -= 0.5 * g;
  }
  return b;
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("dense optimum reference cases") {
  const auto m0 = mode(MatrixXd::Identity(2, 2), vec(1, 0), 0.5);
  const auto m1 = mode(MatrixXd::Identity(2, 2), vec(0, 1), 0.5);
  const VectorXd avg = dense_optimum(m0, m1);
  CHECK(avg(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(avg(1) == doctest::Approx(0.5).epsilon(1e-15));

  const auto same = dense_optimum(mode(diag(3, 1), vec(2, -1), 0.3), mode(diag(1, 5), vec(2, -1), 0.7));
  CHECK((same - vec(2, -1)).norm() <= 1e-14);

  const auto a0 = mode(diag(2, 1), vec(1, 0), 0.5);
  const auto a1 = mode(diag(1, 2), vec(0, 1), 0.5);
  const VectorXd opt = dense_optimum(a0, a1);
  CHECK(std::abs(opt(0) - 2.0 / 3.0) <= 1e-14);
  CHECK(std::abs(opt(1) - 2.0 / 3.0) <= 1e-14);
  CHECK((descend(a0, a1) - opt).norm() <= 1e-10);
  CHECK(dense_gradient(a0, a1, opt).norm() <= 1e-10);
}

TEST_CASE("singular and invalid inputs") {
  const auto z0 = mode(diag(1, 0), vec(0, 0), 0.5);
  const auto z1 = mode(diag(1, 0), vec(1, 1), 0.5);
  CHECK_THROWS_AS(dense_optimum(z0, z1), SingularityError);
  CHECK_THROWS(validate_pair(mode(diag(1, 1), vec(0, 0), 0.5), mode(diag(1, 1), vec(0, 0), 0.6)));
  MatrixXd asym = diag(1, 1);
  asym(0, 1) = 0.5;
  CHECK_THROWS(mode(asym, vec(0, 0), 0.5).validate());
  CHECK_THROWS(mode(diag(1, -1), vec(0, 0), 0.5).validate());
}

TEST_CASE("conflict gap reference cases") {
  const auto c0 = mode(diag(2, 3), vec(1, 1), 0.4);
  const auto c1 = mode(diag(1, 1), vec(1, 1), 0.6);
  CHECK(std::abs(conflict_gap(c0, c1)) <= 1e-15);

  // H = I, pi = 1/2, db = (1, -1): 1/2 * 1/4 * 2 = 0.25
  const auto e0 = mode(MatrixXd::Identity(2, 2), vec(0, 0), 0.5);
  const auto e1 = mode(MatrixXd::Identity(2, 2), vec(1, -1), 0.5);
  CHECK(std::abs(conflict_gap(e0, e1) - 0.25) <= 1e-15);
  const VectorXd d = dense_optimum(e0, e1);
  CHECK(std::abs(dense_objective(e0, e1, d) - split_objective(e0, e1) - 0.25) <= 1e-15);
  CHECK(std::abs(equal_curvature_gap(MatrixXd::Identity(2, 2), vec(0, 0), vec(1, -1), 0.5) - 0.25) <= 1e-15);
  CHECK(equal_curvature_gap(MatrixXd::Identity(2, 2), vec(0, 0), vec(1, -1), 0.0) == 0.0);
  CHECK(equal_curvature_gap(MatrixXd::Identity(2, 2), vec(0, 0), vec(1, -1), 1.0) == 0.0);
}

TEST_CASE("random instances: gap, dominance, equal curvature") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto [m0, m1] = random_mode_pair(4, rng);
    const double gap = conflict_gap(m0, m1);
    CHECK(gap >= -1e-12);
    const VectorXd d = dense_optimum(m0, m1);
    CHECK(std::abs(dense_objective(m0, m1, d) - split_objective(m0, m1) - gap) <= 1e-10 * (1 + gap));
    CHECK(fixed_backbone_dominance(m0, m1).dominates);

    const auto [q0, q1] = random_mode_pair(4, rng, true);
    CHECK(std::abs(conflict_gap(q0, q1) - equal_curvature_gap(q0.H, q0.beta_star, q1.beta_star, q0.pi)) <=
          1e-10);
  }
  const auto eq0 = mode(MatrixXd::Identity(2, 2), vec(0, 0), 0.5);
  const auto eq1 = mode(MatrixXd::Identity(2, 2), vec(1, -1), 0.5);
  const Dominance dom = fixed_backbone_dominance(eq0, eq1);
  CHECK(std::abs(dom.dense_value - dom.split_value - 0.25) <= 1e-15);
  const Dominance tie = fixed_backbone_dominance(eq0, mode(MatrixXd::Identity(2, 2), vec(0, 0), 0.5));
  CHECK(tie.dense_value == tie.split_value);
}

TEST_CASE("interference predicate reference cases") {
  CHECK(interference_predicate({vec(1, 0), vec(-3, 0), 0.5, 0.5}).interferes);
  CHECK_FALSE(interference_predicate({vec(1, 2), vec(1, 2), 0.5, 0.5}).interferes);
  CHECK_FALSE(interference_predicate({vec(1, 0), vec(0, 1), 0.5, 0.5}).interferes);
  CHECK(interference_predicate({vec(1, 0), vec(-3, 0), 0.5, 0.5}).first_order_delta == doctest::Approx(-1.0));
  CHECK_THROWS_AS(interference_predicate({vec(0, 0), vec(1, 0), 0.5, 0.5}), ArgumentError);
}

TEST_CASE("one-step interference on exact quadratics") {
  // Conflicting pair: mode 1 pulls far past mode 0's optimum.
  const auto m0 = mode(MatrixXd::Identity(2, 2), vec(1, 0), 0.5);
  const auto m1 = mode(MatrixXd::Identity(2, 2), vec(-5, 0), 0.5);
  const auto c = verify_interference_on_quadratic(m0, m1, vec(0.5, 0), 0.01);
  CHECK(c.prediction.interferes);
  CHECK(c.dense_change > 0.0);
  CHECK(c.decisive);
  CHECK(c.sign_matches);
  CHECK(c.split_change <= 0.0);
  CHECK(c.split_change <= c.split_bound);

  const auto a1 = mode(MatrixXd::Identity(2, 2), vec(1, 0), 0.5);
  const auto aligned = verify_interference_on_quadratic(m0, a1, vec(0.5, 0), 0.01);
  CHECK_FALSE(aligned.prediction.interferes);
  CHECK(aligned.dense_change < 0.0);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto [r0, r1] = random_mode_pair(3, rng);
    const VectorXd beta = VectorXd::Random(3);
    const auto rc = verify_interference_on_quadratic(r0, r1, beta, 0.01);
    if (rc.decisive) CHECK(rc.sign_matches);
    CHECK(rc.split_change <= rc.split_bound + 1e-12);
  }
}

TEST_CASE("length mass arithmetic") {
  std::vector<ChatExample> data;
  for (int i = 0; i < 3; ++i) {
    ChatExample a{{kBosId, 7, kNoThinkId}, {8, kEosId}, Route::NoThink, {}};
    ChatExample b{{kBosId, 7, kThinkId}, std::vector<TokenId>(19, 9), Route::Think, {}};
    b.target_ids.push_back(kEosId);
    data.push_back(a);
    data.push_back(b);
  }
  const auto r = length_mass_report(data);
  CHECK(r.modes[0].count == 3);
  CHECK(r.modes[1].token_mass == 10 * r.modes[0].token_mass);
  CHECK(r.dense_think_share == doctest::Approx(10.0 / 11.0));
  std::vector<ChatExample> only_think(data.begin() + 1, data.begin() + 2);
  CHECK(length_mass_report(only_think).modes[0].token_mass == 0);
}

TEST_CASE("linearization at zero perturbation") {
  const auto p = make_tiny_problem(3);
  const std::vector<double> eps{0.0};
  const auto rows = linearization_residual(p.params, p.no_think[0].prompt_ids, eps, 1);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].gap_norm == 0.0);
  CHECK(rows[0].prediction_norm == 0.0);
}

TEST_CASE("suite contracts") {
  SuiteOptions o;
  o.checks = {"conflict-gap"};
  o.instances = 100;
  const auto recs = run_checks(o);
  CHECK(recs.size() == 100);
  CHECK(all_passed(recs));
  for (const auto& r : recs) {
    const auto j = r.to_json();
    CHECK(j.contains("inputs_digest"));
    CHECK(j["pass"] == true);
  }
  o.checks = {"no-such-check"};
  CHECK_THROWS_AS(run_checks(o), ArgumentError);
  o.checks = {"hessian-block"};
  o.probes = 0;
  CHECK_THROWS_AS(run_checks(o), ArgumentError);
  CHECK(available_checks().size() >= 18);
}

TEST_CASE("a corrupted backward fails the gradient oracle") {
  SuiteOptions o;
  o.checks = {"gradient-oracle"};
  o.gradient_seeds = 1;
  CHECK(all_passed(run_checks(o)));
  ScopedBackwardFault fault("silu", 1.5);
  CHECK_FALSE(all_passed(run_checks(o)));
}

TEST_CASE("record digests are reproducible") {
  SuiteOptions o;
  o.checks = {"dominance", "interference"};
  o.instances = 5;
  o.seed = 4;
  const auto a = run_checks(o);
  const auto b = run_checks(o);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].inputs_digest == b[i].inputs_digest);
    CHECK(a[i].measured == b[i].measured);
  }
}

}  // TEST_SUITE
