#include "ple/theory/suite.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>

#include "ple/error.hpp"
#include "ple/theory/model_checks.hpp"
#include "ple/theory/quadratic.hpp"
#include "ple/trainer.hpp"

namespace ple::theory {

nlohmann::json CheckRecord::to_json() const {
  return {{"check", check},         {"inputs_digest", inputs_digest}, {"measured", measured},
          {"threshold", threshold}, {"relation", relation},           {"pass", pass}};
}

CheckRecord make_record(std::string check, std::string digest, double measured, double threshold,
                        std::string relation) {
  CheckRecord r{std::move(check), std::move(digest), measured, threshold, std::move(relation), false};
  r.pass = r.relation == ">" ? measured > threshold : measured <= threshold;
  if (std::isnan(measured)) r.pass = false;
  return r;
}

Digest& Digest::add(std::string_view s) {
  for (unsigned char c : s) {
    h_ ^= c;
    h_ *= 0x100000001b3ULL;
  }
  return *this;
}

Digest& Digest::add(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h_ ^= (v >> (8 * i)) & 0xff;
    h_ *= 0x100000001b3ULL;
  }
  return *this;
}

Digest& Digest::add(double v) { return add(std::bit_cast<std::uint64_t>(v)); }

Digest& Digest::add(std::span<const double> v) {
  for (double x : v) add(x);
  return *this;
}

Digest& Digest::add(const ParamVector& p) {
  for (const auto& seg : p) {
    add(std::string_view(seg.name));
    add(seg.value.data());
  }
  return *this;
}

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
  return buf;
}

namespace {

using Records = std::vector<CheckRecord>;

std::string digest_pair(const QuadraticMode& m0, const QuadraticMode& m1) {
  Digest d;
  for (const auto* m : {&m0, &m1}) {
    d.add(std::span<const double>(m->H.data(), static_cast<std::size_t>(m->H.size())));
    d.add(std::span<const double>(m->beta_star.data(), static_cast<std::size_t>(m->beta_star.size())));
    d.add(m->pi).add(m->base_loss);
  }
  return d.hex();
}

std::string digest_problem(const TinyProblem& p, std::uint64_t seed) {
  Digest d;
  d.add(seed).add(p.params.values());
  for (const auto& ex : p.mixed()) {
    for (TokenId t : ex.prompt_ids) d.add(static_cast<std::uint64_t>(t));
    for (TokenId t : ex.target_ids) d.add(static_cast<std::uint64_t>(t));
  }
  return d.hex();
}

std::mt19937_64 stream(const SuiteOptions& o, std::uint64_t salt) {
  return std::mt19937_64(o.seed * 1000003ULL + salt);
}

void dense_optimum_check(const SuiteOptions& o, Records& out) {
  auto rng = stream(o, 1);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng);
    const VectorXd b = dense_optimum(m0, m1);
    out.push_back(make_record("dense-optimum", digest_pair(m0, m1),
                              dense_gradient(m0, m1, b).norm(), 1e-10));
  }
}

void conflict_gap_check(const SuiteOptions& o, Records& out) {
  auto rng = stream(o, 2);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng);
    const double gap = conflict_gap(m0, m1);
    const double direct = dense_objective(m0, m1, dense_optimum(m0, m1)) - split_objective(m0, m1);
    CheckRecord r = make_record("conflict-gap", digest_pair(m0, m1), std::abs(gap - direct), 1e-10);
    r.pass = r.pass && gap >= -1e-12;
    out.push_back(r);
  }
}

void equal_curvature_check(const SuiteOptions& o, Records& out) {
  auto rng = stream(o, 3);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng, true);
    const double closed = equal_curvature_gap(m0.H, m0.beta_star, m1.beta_star, m0.pi);
    out.push_back(make_record("equal-curvature", digest_pair(m0, m1),
                              std::abs(closed - conflict_gap(m0, m1)), 1e-10));
  }
}

void dominance_check(const SuiteOptions& o, Records& out) {
  auto rng = stream(o, 4);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng);
    const Dominance d = fixed_backbone_dominance(m0, m1);
    out.push_back(make_record("dominance", digest_pair(m0, m1), d.split_value - d.dense_value, 1e-12));
  }
}

void gap_scaling_check(const SuiteOptions& o, Records& out) {
  auto rng = stream(o, 5);
  std::uniform_real_distribution<double> scale(1.0, 4.0);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng, true);
    const double c = scale(rng);
    QuadraticMode far = m1;
    far.beta_star = m0.beta_star + c * (m1.beta_star - m0.beta_star);
    const double base = conflict_gap(m0, m1);
    const double scaled = conflict_gap(m0, far);
    out.push_back(make_record("gap-scaling", digest_pair(m0, m1).append(":").append(std::to_string(c)),
                              std::abs(scaled - c * c * base) / std::max(1.0, c * c * base), 1e-10));
  }
}

// Odd instances start next to the no-think optimum, where the think
// gradient dominates and interference is likely.
void interference_checks(const SuiteOptions& o, Records& out, bool sign, bool split) {
  auto rng = stream(o, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < o.instances; ++i) {
    auto [m0, m1] = random_mode_pair(o.dim, rng);
    VectorXd beta(static_cast<Eigen::Index>(o.dim));
    for (Eigen::Index k = 0; k < beta.size(); ++k) beta(k) = normal(rng);
    if (i % 2 == 1) beta = m0.beta_star + 0.05 * beta;
    Eigen::SelfAdjointEigenSolver<MatrixXd> e0(m0.H, Eigen::EigenvaluesOnly);
    Eigen::SelfAdjointEigenSolver<MatrixXd> e1(m1.H, Eigen::EigenvaluesOnly);
    const double lr = 1e-3 / std::max(e0.eigenvalues().maxCoeff(), e1.eigenvalues().maxCoeff());
    const InterferenceCheck c = verify_interference_on_quadratic(m0, m1, beta, lr);
    Digest d;
    d.add(digest_pair(m0, m1)).add(std::span<const double>(beta.data(), o.dim)).add(lr);
    if (sign) {
      out.push_back(make_record("interference", d.hex(), c.sign_matches ? 0.0 : 1.0, 0.0));
    }
    if (split) {
      const double tol = 1e-12 * (1.0 + std::abs(m0.loss(beta)));
      out.push_back(make_record("split-step", d.hex(), c.split_change - c.split_bound, tol));
    }
  }
}

TinyProblem audit_problem(const SuiteOptions& o, std::uint64_t seed) {
  if (o.model) return problem_for(*o.model, seed);
  return make_tiny_problem(seed);
}

void gradient_oracle_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.gradient_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = audit_problem(o, seed);
    const std::size_t coords = o.model ? o.max_fd_coords : 0;
    out.push_back(make_record("gradient-oracle", digest_problem(p, seed),
                              gradient_oracle_error(p, 1e-5, coords, seed), 1e-5));
  }
}

void decoupling_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = audit_problem(o, seed);
    const std::string dg = digest_problem(p, seed);
    out.push_back(make_record("decoupling", dg, inactive_expert_gradient(p), 0.0));

    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.batch_size = 2;
    tc.epochs = 2;
    tc.seed = seed;
    const TrainResult r = train(p.params, p.no_think, tc);
    double moved = 0.0;
    for (std::size_t seg : p.params.segment_indices(Block::kExpert1)) {
      const auto a = r.params.values()[seg].data();
      const auto b = p.params.values()[seg].data();
      for (std::size_t i = 0; i < a.size(); ++i) moved = std::max(moved, std::abs(a[i] - b[i]));
      if (!(r.params.values()[seg] == p.params.values()[seg])) moved = std::max(moved, 1e-300);
    }
    out.push_back(make_record("decoupling-training", dg, moved, 0.0));
  }
}

void decomposition_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    TinyProblem p = make_tiny_problem(seed, tiny_config(), 5);
    p.think.resize(2 + s % 3);  // unequal mode weights
    out.push_back(make_record("gradient-decomposition", digest_problem(p, seed),
                              gradient_decomposition_error(p), 1e-12));
  }
}

void hessian_checks(const SuiteOptions& o, Records& out, bool cross, bool control) {
  if (o.probes < 1) throw ArgumentError("probes must be at least 1");
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = audit_problem(o, seed);
    const HessianAudit a = hessian_block_audit(p.params, p.no_think, p.think, o.probes, seed);
    const std::string dg = digest_problem(p, seed);
    if (cross) out.push_back(make_record("hessian-block", dg, a.beta0_beta1, 1e-6));
    if (control) {
      out.push_back(make_record("hessian-control", dg, std::min(a.beta0_beta0, a.alpha_beta0),
                                1e-4, ">"));
    }
  }
}

void identical_init_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const ModelParams dense = ModelParams::random_dense(tiny_config(), seed);
    const TinyProblem p = problem_for(clone_from_dense(dense), seed);
    double worst = 0.0;
    for (const auto& ex : p.mixed()) {
      const LmBatchRow row = lm_row(ex);
      for (double g : route_logit_gap(p.params, row.inputs)) worst = std::max(worst, g);
      const Tensor a = forward(p.params, row.inputs, Route::NoThink);
      const Tensor b = forward(dense, row.inputs, Route::NoThink);
      if (!(a == b)) worst = std::max({worst, max_abs_diff(a, b), 1e-300});
    }
    out.push_back(make_record("identical-init", digest_problem(p, seed), worst, 0.0));
  }
}

void trajectory_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = make_tiny_problem(seed, tiny_config(), 10, false);
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.batch_size = 2;
    tc.epochs = 10;  // 5 pairs per epoch -> 50 paired steps
    tc.seed = seed;
    const TrainResult r = train(p.params, p.mixed(), tc);
    out.push_back(make_record("trajectory", digest_problem(p, seed),
                              r.log.identity_residual(r.params, tc.learning_rate), 1e-10));
  }
}

void token_routing_checks(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = make_tiny_problem(seed);
    const std::string dg = digest_problem(p, seed);
    double constant_diff = 0.0;
    double alternating_min = std::numeric_limits<double>::infinity();
    for (const auto& ex : p.mixed()) {
      const std::size_t T = lm_row(ex).inputs.size();
      const std::vector<Route> constant(T, ex.mode);
      const ValueAndGrad tok = token_level_route_variant(p.params, ex, constant);
      const ValueAndGrad seq = value_and_grad(mode_loss_fn(p.params, {ex}), p.params.values());
      for (std::size_t seg = 0; seg < seq.grad.num_segments(); ++seg) {
        constant_diff = std::max(constant_diff, max_abs_diff(tok.grad[seg], seq.grad[seg]));
      }
      std::vector<Route> alternating(T);
      for (std::size_t t = 0; t < T; ++t) alternating[t] = t % 2 ? Route::Think : Route::NoThink;
      const ValueAndGrad alt = token_level_route_variant(p.params, ex, alternating);
      for (Block b : {Block::kExpert0, Block::kExpert1}) {
        double m = 0.0;
        for (std::size_t seg : p.params.segment_indices(b)) {
          for (double g : alt.grad[seg].data()) m = std::max(m, std::abs(g));
        }
        alternating_min = std::min(alternating_min, m);
      }
    }
    out.push_back(make_record("token-routing-constant", dg, constant_diff, 1e-12));
    out.push_back(make_record("token-routing-alternating", dg, alternating_min, 0.0, ">"));
  }
}

void linearization_checks(const SuiteOptions& o, Records& out, bool scaling, bool affine) {
  const std::vector<double> eps = {1e-1, 5e-2, 2.5e-2};
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    if (scaling) {
      const TinyProblem p = make_tiny_problem(seed);
      const auto tokens = lm_row(p.think.front()).inputs;
      const auto rows = linearization_residual(p.params, tokens, eps, seed);
      double worst = 0.0;
      for (std::size_t i = 1; i < rows.size(); ++i) {
        worst = std::max(worst, rows[i].relative_residual / rows[i - 1].relative_residual);
      }
      out.push_back(make_record("linearization", digest_problem(p, seed), worst, 0.6));
    }
    if (affine) {
      PleConfig c = tiny_config();
      c.final_norm = false;
      const TinyProblem p = make_tiny_problem(seed, c);
      const auto tokens = lm_row(p.think.front()).inputs;
      double worst = 0.0;
      for (const auto& row : linearization_residual(p.params, tokens, eps, seed)) {
        worst = std::max(worst, row.relative_residual);
      }
      out.push_back(make_record("linearization-affine", digest_problem(p, seed), worst, 1e-10));
    }
  }
}

void length_mass_check(const SuiteOptions& o, Records& out) {
  for (std::size_t s = 0; s < o.model_seeds; ++s) {
    const std::uint64_t seed = o.seed + s;
    const TinyProblem p = make_tiny_problem(seed, tiny_config(), 6);
    const auto a = p.mixed();
    const auto b = stretch_think_targets(a, 2);
    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.batch_size = 2;
    tc.epochs = 2;
    tc.seed = seed;
    const LengthInvariance li = length_invariance(p.params, a, b, tc);
    out.push_back(make_record("length-mass", digest_problem(p, seed),
                              li.beta0_bitwise_equal ? 0.0 : 1.0, 0.0));
  }
}

struct Entry {
  std::string name;
  std::function<void(const SuiteOptions&, Records&)> run;
};

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"dense-optimum", dense_optimum_check},
      {"conflict-gap", conflict_gap_check},
      {"equal-curvature", equal_curvature_check},
      {"dominance", dominance_check},
      {"gap-scaling", gap_scaling_check},
      {"interference", [](const SuiteOptions& o, Records& r) { interference_checks(o, r, true, false); }},
      {"split-step", [](const SuiteOptions& o, Records& r) { interference_checks(o, r, false, true); }},
      {"gradient-oracle", gradient_oracle_check},
      {"decoupling", decoupling_check},
      {"gradient-decomposition", decomposition_check},
      {"hessian-block", [](const SuiteOptions& o, Records& r) { hessian_checks(o, r, true, false); }},
      {"hessian-control", [](const SuiteOptions& o, Records& r) { hessian_checks(o, r, false, true); }},
      {"identical-init", identical_init_check},
      {"trajectory", trajectory_check},
      {"token-routing", token_routing_checks},
      {"linearization", [](const SuiteOptions& o, Records& r) { linearization_checks(o, r, true, false); }},
      {"linearization-affine", [](const SuiteOptions& o, Records& r) { linearization_checks(o, r, false, true); }},
      {"length-mass", length_mass_check},
  };
  return entries;
}

}  // namespace

const std::vector<std::string>& available_checks() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : registry()) n.push_back(e.name);
    return n;
  }();
  return names;
}

std::vector<CheckRecord> run_checks(const SuiteOptions& options) {
  if (options.probes < 1) throw ArgumentError("probes must be at least 1");
  for (const auto& name : options.checks) {
    const auto& names = available_checks();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw ArgumentError("unknown check '" + name + "'");
    }
  }
  Records out;
  for (const auto& e : registry()) {
    if (!options.checks.empty() &&
        std::find(options.checks.begin(), options.checks.end(), e.name) == options.checks.end()) {
      continue;
    }
    e.run(options, out);
  }
  return out;
}

bool all_passed(std::span<const CheckRecord> records) {
  return std::all_of(records.begin(), records.end(), [](const CheckRecord& r) { return r.pass; });
}

void print_table(std::ostream& out, std::span<const CheckRecord> records) {
  struct Row {
    std::size_t count = 0, passed = 0;
    double worst = 0.0;
    double threshold = 0.0;
    std::string relation;
  };
  std::vector<std::string> order;
  std::map<std::string, Row> rows;
  for (const auto& r : records) {
    auto [it, fresh] = rows.try_emplace(r.check);
    Row& row = it->second;
    if (fresh) {
      order.push_back(r.check);
      row.worst = r.measured;
      row.threshold = r.threshold;
      row.relation = r.relation;
    }
    ++row.count;
    row.passed += r.pass;
    // Worst case: largest value for "<=" checks, smallest for ">" checks.
    row.worst = r.relation == ">" ? std::min(row.worst, r.measured) : std::max(row.worst, r.measured);
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %7s %7s %14s %14s  %s\n", "check", "records", "passed",
                "worst", "threshold", "status");
  out << line;
  for (const auto& name : order) {
    const Row& row = rows[name];
    std::snprintf(line, sizeof line, "%-26s %7zu %7zu %14.6e %2s %11.3e  %s\n", name.c_str(),
                  row.count, row.passed, row.worst, row.relation.c_str(), row.threshold,
                  row.passed == row.count ? "PASS" : "FAIL");
    out << line;
  }
}

}  // namespace ple::theory
