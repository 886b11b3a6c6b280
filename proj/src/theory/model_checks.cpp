#include "ple/theory/model_checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ple/error.hpp"

namespace ple::theory {
namespace {

double block_distance(const ModelParams& a, const ModelParams& b, Block block) {
  double sq = 0.0;
  for (std::size_t s : a.segment_indices(block)) {
    const auto x = a.values()[s].data();
    const auto y = b.values()[s].data();
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - y[i]) * (x[i] - y[i]);
  }
  return std::sqrt(sq);
}

double frobenius(const Tensor& t) {
  double sq = 0.0;
  for (double v : t.data()) sq += v * v;
  return std::sqrt(sq);
}

}  // namespace

PleConfig tiny_config() {
  PleConfig c;
  c.vocab_size = 24;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq = 16;
  return c;
}

std::vector<ChatExample> TinyProblem::mixed() const {
  std::vector<ChatExample> out = no_think;
  out.insert(out.end(), think.begin(), think.end());
  return out;
}

TinyProblem make_tiny_problem(std::uint64_t seed, const PleConfig& config, std::size_t per_mode,
                              bool distinct_experts) {
  if (config.vocab_size <= kNumReserved) {
    throw ConfigError("tiny problem needs words beyond the reserved tokens");
  }
  ModelParams params = clone_from_dense(ModelParams::random_dense(config, seed));
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  if (distinct_experts) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Block b : {Block::kExpert0, Block::kExpert1}) {
      for (std::size_t s : params.segment_indices(b)) {
        Tensor& t = params.values()[s];
        const double sd = 0.5 / std::sqrt(static_cast<double>(t.cols()));
        for (double& v : t.data()) v += sd * normal(rng);
      }
    }
  }
  return problem_for(std::move(params), seed, per_mode);
}

TinyProblem problem_for(ModelParams params, std::uint64_t seed, std::size_t per_mode) {
  const PleConfig& config = params.config();
  if (config.vocab_size <= kNumReserved) {
    throw ConfigError("random examples need words beyond the reserved tokens");
  }
  if (config.max_seq < 11) throw ConfigError("random examples need max_seq >= 11");
  std::mt19937_64 rng(seed + 0x5851f42d4c957f2dULL);
  std::uniform_int_distribution<TokenId> word(static_cast<TokenId>(kNumReserved),
                                              static_cast<TokenId>(config.vocab_size - 1));
  std::uniform_int_distribution<std::size_t> len(2, 4);
  auto make = [&](Route mode) {
    ChatExample ex;
    ex.mode = mode;
    ex.prompt_ids.push_back(kBosId);
    for (std::size_t i = len(rng); i > 0; --i) ex.prompt_ids.push_back(word(rng));
    ex.prompt_ids.push_back(control_token_for(mode));
    for (std::size_t i = len(rng); i > 0; --i) ex.target_ids.push_back(word(rng));
    ex.target_ids.push_back(kEosId);
    return ex;
  };
  TinyProblem p{std::move(params), {}, {}};
  for (std::size_t i = 0; i < per_mode; ++i) {
    p.no_think.push_back(make(Route::NoThink));
    p.think.push_back(make(Route::Think));
  }
  return p;
}

double gradient_oracle_error(const TinyProblem& p, double step, std::size_t max_coords,
                             std::uint64_t seed) {
  const LossFn fn = full_objective_fn(p.params, p.mixed());
  const ValueAndGrad vg = value_and_grad(fn, p.params.values());
  const std::size_t total = p.params.values().total_size();
  if (max_coords == 0 || max_coords >= total) {
    const ParamVector fd = finite_diff_grad(fn, p.params.values(), step);
    return max_relative_error(vg.grad, fd);
  }
  // Central differences on a random coordinate subset.
  std::mt19937_64 rng(seed);
  ParamVector work = p.params.values();
  const std::size_t nseg = work.num_segments();
  double max_diff = 0.0, max_ref = 0.0;
  for (std::size_t k = 0; k < max_coords; ++k) {
    std::size_t flat = static_cast<std::size_t>(rng() % total);
    std::size_t s = 0;
    while (flat >= work[s].size()) flat -= work[s++].size();
    if (s >= nseg) break;
    double& x = work[s][flat];
    const double orig = x;
    x = orig + step;
    const double up = evaluate_loss(fn, work);
    x = orig - step;
    const double down = evaluate_loss(fn, work);
    x = orig;
    const double fd = (up - down) / (2.0 * step);
    max_diff = std::max(max_diff, std::abs(vg.grad[s][flat] - fd));
    max_ref = std::max(max_ref, std::abs(fd));
  }
  if (max_ref == 0.0) return max_diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return max_diff / max_ref;
}

double inactive_expert_gradient(const TinyProblem& p) {
  double worst = 0.0;
  for (Route mode : {Route::NoThink, Route::Think}) {
    const auto& batch = mode == Route::Think ? p.think : p.no_think;
    const ValueAndGrad vg = value_and_grad(mode_loss_fn(p.params, batch), p.params.values());
    const Block idle = mode == Route::Think ? Block::kExpert0 : Block::kExpert1;
    for (std::size_t s : p.params.segment_indices(idle)) {
      for (double g : vg.grad[s].data()) worst = std::max(worst, std::abs(g));
    }
  }
  return worst;
}

double gradient_decomposition_error(const TinyProblem& p) {
  const double n0 = static_cast<double>(p.no_think.size());
  const double n1 = static_cast<double>(p.think.size());
  const double pi0 = n0 / (n0 + n1), pi1 = n1 / (n0 + n1);
  const auto full = value_and_grad(full_objective_fn(p.params, p.mixed()), p.params.values());
  const auto g0 = value_and_grad(mode_loss_fn(p.params, p.no_think), p.params.values());
  const auto g1 = value_and_grad(mode_loss_fn(p.params, p.think), p.params.values());
  double worst = 0.0;
  for (std::size_t s = 0; s < full.grad.num_segments(); ++s) {
    const auto f = full.grad[s].data();
    const auto a = g0.grad[s].data();
    const auto b = g1.grad[s].data();
    for (std::size_t i = 0; i < f.size(); ++i) {
      worst = std::max(worst, std::abs(f[i] - (pi0 * a[i] + pi1 * b[i])));
    }
  }
  return worst;
}

HessianAudit hessian_block_audit(const ModelParams& params, std::span<const ChatExample> batch0,
                                 std::span<const ChatExample> batch1, std::size_t probes,
                                 std::uint64_t seed, double step) {
  if (params.is_dense()) throw ConfigError("the Hessian block audit needs a two-expert model");
  if (probes < 1) throw ArgumentError("probes must be at least 1");
  std::vector<ChatExample> data(batch0.begin(), batch0.end());
  data.insert(data.end(), batch1.begin(), batch1.end());
  for (const auto& ex : batch0) {
    if (ex.mode != Route::NoThink) throw BatchingError("batch0 must hold no-think examples only");
  }
  for (const auto& ex : batch1) {
    if (ex.mode != Route::Think) throw BatchingError("batch1 must hold think examples only");
  }
  const LossFn fn = full_objective_fn(params, std::move(data));
  const auto alpha = params.segment_names(Block::kShared);
  const auto b0 = params.segment_names(Block::kExpert0);
  const auto b1 = params.segment_names(Block::kExpert1);
  std::vector<std::string> b0_even, b0_odd;
  for (std::size_t i = 0; i < b0.size(); ++i) (i % 2 ? b0_odd : b0_even).push_back(b0[i]);

  const ParamVector& v = params.values();
  HessianAudit a;
  a.beta0_beta1 = finite_diff_hessian_block(fn, v, b0, b1, step, probes, seed);
  a.alpha_beta0 = finite_diff_hessian_block(fn, v, alpha, b0, step, probes, seed + 1);
  a.alpha_beta1 = finite_diff_hessian_block(fn, v, alpha, b1, step, probes, seed + 2);
  a.beta0_beta0 = finite_diff_hessian_block(fn, v, b0_even, b0_odd, step, probes, seed + 3);
  return a;
}

std::vector<LinearizationRow> linearization_residual(const ModelParams& params,
                                                     std::span<const TokenId> tokens,
                                                     std::span<const double> epsilons,
                                                     std::uint64_t seed, double fd_step) {
  if (params.is_dense()) throw ConfigError("linearization check needs a two-expert model");
  if (!(fd_step > 0)) throw ArgumentError("fd_step must be positive");
  ModelParams base = params;
  const std::size_t L = base.config().n_layers;
  for (std::size_t l = 0; l < L; ++l) base.set_expert(l, 1, base.expert(l, 0));

  const ExpertMlp anchor = base.expert(L - 1, 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ExpertMlp direction = anchor;
  for (Tensor* t : {&direction.w_gate, &direction.w_up, &direction.w_down}) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(t->cols()));
    for (double& x : t->data()) x = sd * normal(rng);
  }

  std::vector<LinearizationRow> rows;
  for (double eps : epsilons) {
    ModelParams m = base;
    ExpertMlp e = anchor;
    for (auto [dst, src] : {std::pair{&e.w_gate, &direction.w_gate},
                            std::pair{&e.w_up, &direction.w_up},
                            std::pair{&e.w_down, &direction.w_down}}) {
      for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] += eps * (*src)[i];
    }
    m.set_expert(L - 1, 1, e);

    const Tensor o0 = forward(m, tokens, Route::NoThink);
    const Tensor o1 = forward(m, tokens, Route::Think);
    // Earlier layers share their experts, so both routes see the same u.
    const Tensor u = last_block_input(m, tokens, Route::NoThink);
    const Tensor f0 = last_block_output(m, u, Route::NoThink);
    const Tensor f1 = last_block_output(m, u, Route::Think);

    Tensor h0 = u;
    Tensor delta = f1;
    for (std::size_t i = 0; i < h0.size(); ++i) {
      h0[i] += f0[i];
      delta[i] -= f0[i];
    }
    const double delta_norm = frobenius(delta);
    Tensor prediction(o0.shape());
    if (delta_norm > 0) {
      Tensor plus = h0, minus = h0;
      for (std::size_t i = 0; i < h0.size(); ++i) {
        const double step = fd_step * delta[i] / delta_norm;
        plus[i] += step;
        minus[i] -= step;
      }
      const Tensor gp = downstream_map(m, plus);
      const Tensor gm = downstream_map(m, minus);
      for (std::size_t i = 0; i < prediction.size(); ++i) {
        prediction[i] = (gp[i] - gm[i]) / (2.0 * fd_step) * delta_norm;
      }
    }
    LinearizationRow row;
    row.epsilon = eps;
    Tensor gap = o1;
    Tensor residual(o0.shape());
    for (std::size_t i = 0; i < gap.size(); ++i) {
      gap[i] -= o0[i];
      residual[i] = gap[i] - prediction[i];
    }
    row.gap_norm = frobenius(gap);
    row.prediction_norm = frobenius(prediction);
    row.residual_norm = frobenius(residual);
    row.relative_residual = row.gap_norm > 0 ? row.residual_norm / row.gap_norm : row.residual_norm;
    rows.push_back(row);
  }
  return rows;
}

LengthMassReport length_mass_report(std::span<const ChatExample> dataset) {
  LengthMassReport r;
  for (const auto& ex : dataset) {
    auto& m = r.modes[route_index(ex.mode)];
    ++m.count;
    m.token_mass += ex.target_ids.size();
  }
  for (auto& m : r.modes) {
    m.mean_length = m.count ? static_cast<double>(m.token_mass) / static_cast<double>(m.count) : 0.0;
  }
  const std::size_t total = r.modes[0].token_mass + r.modes[1].token_mass;
  r.dense_think_share = total ? static_cast<double>(r.modes[1].token_mass) / static_cast<double>(total) : 0.0;
  return r;
}

LengthInvariance length_invariance(const ModelParams& start, std::span<const ChatExample> a,
                                   std::span<const ChatExample> b, TrainConfig config) {
  if (start.is_dense()) throw ConfigError("length invariance compares two-expert models");
  if (a.size() != b.size()) throw ArgumentError("paired datasets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].mode != b[i].mode) throw ArgumentError("paired datasets differ in mode at example " + std::to_string(i));
  }
  config.freeze_shared = true;
  config.reduction = LossReduction::kTokenSum;
  const TrainResult ra = train(start, a, config);
  const TrainResult rb = train(start, b, config);
  LengthInvariance out;
  out.beta0_bitwise_equal = true;
  for (std::size_t s : start.segment_indices(Block::kExpert0)) {
    if (!(ra.params.values()[s] == rb.params.values()[s])) out.beta0_bitwise_equal = false;
  }
  out.beta0_update_norm_a = block_distance(ra.params, start, Block::kExpert0);
  out.beta0_update_norm_b = block_distance(rb.params, start, Block::kExpert0);
  out.beta1_update_norm_a = block_distance(ra.params, start, Block::kExpert1);
  out.beta1_update_norm_b = block_distance(rb.params, start, Block::kExpert1);
  return out;
}

std::vector<ChatExample> stretch_think_targets(std::span<const ChatExample> examples,
                                               std::size_t factor) {
  if (factor < 1) throw ArgumentError("stretch factor must be at least 1");
  std::vector<ChatExample> out(examples.begin(), examples.end());
  for (auto& ex : out) {
    if (ex.mode != Route::Think) continue;
    std::vector<TokenId> body(ex.target_ids.begin(), ex.target_ids.end());
    if (!body.empty() && body.back() == kEosId) body.pop_back();
    ex.target_ids.clear();
    for (std::size_t k = 0; k < factor; ++k) ex.target_ids.insert(ex.target_ids.end(), body.begin(), body.end());
    ex.target_ids.push_back(kEosId);
  }
  return out;
}

}  // namespace ple::theory
