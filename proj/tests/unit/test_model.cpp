#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "ple/error.hpp"
#include "ple/model.hpp"
#include "ple/numeric/kernels.hpp"
#include "ple/tokenizer.hpp"

using namespace ple;

namespace {

PleConfig small_config() {
  PleConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.max_seq = 24;
  return c;
}

std::vector<TokenId> some_tokens(std::size_t n, std::uint64_t seed, std::size_t vocab = 20) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> out{kBosId};
  while (out.size() < n) out.push_back(static_cast<TokenId>(kNumReserved + rng() % (vocab - kNumReserved)));
  return out;
}

// Independent straight-line SwiGLU: W_down (silu(W_gate x) * (W_up x)).
std::vector<double> reference_mlp(const ExpertMlp& e, const std::vector<double>& x) {
  const std::size_t f = e.w_gate.rows(), d = e.w_gate.cols();
  std::vector<double> hidden(f), out(e.w_down.rows(), 0.0);
  for (std::size_t i = 0; i < f; ++i) {
    double g = 0.0, u = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      g += e.w_gate.at(i, j) * x[j];
      u += e.w_up.at(i, j) * x[j];
    }
    hidden[i] = g / (1.0 + std::exp(-g)) * u;
  }
  for (std::size_t o = 0; o < out.size(); ++o) {
    for (std::size_t i = 0; i < f; ++i) out[o] += e.w_down.at(o, i) * hidden[i];
  }
  return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  PleConfig c = small_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.d_ff = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(config_from_json(to_json(small_config())) == small_config());
}

TEST_CASE("expert MLP reference values") {
  ExpertMlp unit{Tensor::matrix({{1}}), Tensor::matrix({{1}}), Tensor::matrix({{1}})};
  CHECK(mlp_expert(unit, std::vector<double>{0.0})[0] == 0.0);
  CHECK(mlp_expert(unit, std::vector<double>{1.0})[0] == doctest::Approx(0.7310585786300049).epsilon(1e-15));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ExpertMlp e{test::random_tensor({7, 5}, rng), test::random_tensor({7, 5}, rng),
                test::random_tensor({5, 7}, rng)};
    std::vector<double> x(5);
    for (double& v : x) v = test::random_tensor({1}, rng)[0];
    const Tensor got = mlp_expert(e, x);
    const auto want = reference_mlp(e, x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("parameter count of a cloned model") {
  PleConfig c;
  c.vocab_size = 64;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  const ModelParams dense = ModelParams::random_dense(c, 1);
  // embed + per layer (2 norms + 4 attention + 3 MLP) + final norm + head
  const std::size_t dense_total = 64 * 16 + 2 * (2 * 16 + 4 * 16 * 16 + 3 * 16 * 32) + 16 + 64 * 16;
  CHECK(dense.values().total_size() == dense_total);
  const ModelParams ple = clone_from_dense(dense);
  CHECK(ple.values().total_size() == dense_total + 2 * (3 * 16 * 32));
  CHECK(ple.num_experts() == 2);
  CHECK_THROWS_AS(clone_from_dense(ple), ConfigError);
}

TEST_CASE("clone copies the dense MLP into both experts") {
  const ModelParams dense = ModelParams::random_dense(small_config(), 5);
  const ModelParams ple = clone_from_dense(dense);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto src = dense.expert(l, 0);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const auto e = ple.expert(l, slot);
      CHECK(e.w_gate == src.w_gate);
      CHECK(e.w_up == src.w_up);
      CHECK(e.w_down == src.w_down);
    }
  }
  CHECK(ple.segment_names(Block::kExpert0).size() == 6);
  CHECK(ple.segment_names(Block::kExpert1).size() == 6);
  CHECK(dense.segment_names(Block::kDense).size() == 6);
}

TEST_CASE("identical init gives identical routes and matches the dense source") {
  const ModelParams dense = ModelParams::random_dense(small_config(), 7);
  const ModelParams ple = clone_from_dense(dense);
  const auto tokens = some_tokens(10, 1);
  const Tensor d = forward(dense, tokens, Route::NoThink);
  CHECK(forward(ple, tokens, Route::NoThink) == d);
  CHECK(forward(ple, tokens, Route::Think) == d);
  for (double g : route_logit_gap(ple, tokens)) CHECK(g == 0.0);
}

TEST_CASE("perturbing the think expert leaves route 0 untouched") {
  ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 8));
  const auto tokens = some_tokens(9, 2);
  const Tensor r0 = forward(ple, tokens, Route::NoThink);
  const Tensor r1 = forward(ple, tokens, Route::Think);
  auto e = ple.expert(1, 1);
  e.w_up[3] += 0.25;
  ple.set_expert(1, 1, e);
  CHECK(forward(ple, tokens, Route::NoThink) == r0);
  CHECK(max_abs_diff(forward(ple, tokens, Route::Think), r1) > 0.0);
}

TEST_CASE("one expert per token per layer") {
  const ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 9));
  const auto tokens = some_tokens(11, 3);
  for (Route r : {Route::NoThink, Route::Think}) {
    ExpertAudit audit;
    forward(ple, tokens, r, &audit);
    CHECK(audit.tokens == tokens.size());
    CHECK(audit.total_expert_rows() == 2 * tokens.size());
    CHECK(audit.expert_rows[route_index(r)] == 2 * tokens.size());
  }
}

TEST_CASE("capacity and index errors") {
  const ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 1));
  CHECK_THROWS_AS(forward(ple, some_tokens(25, 1), Route::NoThink), CapacityError);
  CHECK_THROWS_AS(forward(ple, std::vector<TokenId>{1, 99}, Route::NoThink), IndexError);
}

TEST_CASE("cached decoding equals full recompute bitwise") {
  const ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 12));
  auto perturbed = ple;
  auto e = perturbed.expert(0, 1);
  e.w_gate[0] += 0.5;
  perturbed.set_expert(0, 1, e);
  for (Route r : {Route::NoThink, Route::Think}) {
    auto prompt = some_tokens(5, 4);
    prompt.push_back(control_token_for(r));
    for (bool greedy : {true, false}) {
      SamplerConfig s;
      s.greedy = greedy;
      s.temperature = 1.3;
      s.seed = 77;
      GenerateOptions cached, full;
      full.use_kv_cache = false;
      const auto a = generate(perturbed, prompt, 12, s, cached);
      const auto b = generate(perturbed, prompt, 12, s, full);
      CHECK(a.tokens == b.tokens);
      CHECK(a.route == r);
      CHECK(generate(perturbed, prompt, 12, s).tokens == a.tokens);
    }
  }
}

TEST_CASE("generation stays on the prompt route") {
  // Residual stream equals the embedding and the head always prefers /think.
  ModelParams m = clone_from_dense(ModelParams::random_dense(small_config(), 13));
  auto& v = m.values();
  for (std::size_t l = 0; l < 2; ++l) {
    v[m.layer(l).wo].fill(0.0);
    for (const auto& ex : m.layer(l).experts) v[ex.w_down].fill(0.0);
  }
  Tensor& embed = v[m.embed_segment()];
  embed.fill(0.0);
  for (std::size_t t = 0; t < embed.rows(); ++t) embed.at(t, 0) = 1.0;
  Tensor& head = v[m.lm_head_segment()];
  head.fill(0.0);
  head.at(kThinkId, 0) = 1.0;

  const std::vector<TokenId> prompt{kBosId, 7, 8, kNoThinkId};
  ExpertAudit audit;
  GenerateOptions opts;
  opts.audit = &audit;
  const auto r = generate(m, prompt, 10, SamplerConfig{}, opts);
  CHECK(r.route == Route::NoThink);
  REQUIRE(r.tokens.size() == 10);
  for (TokenId t : r.tokens) CHECK(t == kThinkId);
  CHECK(audit.expert_rows[1] == 0);
  CHECK(audit.total_expert_rows() == 2 * audit.tokens);

  const auto none = generate(m, std::vector<TokenId>{kBosId, 7}, 3, SamplerConfig{});
  CHECK(none.route == Route::NoThink);
  CHECK(generate(m, prompt, 0, SamplerConfig{}).tokens.empty());
  CHECK_THROWS_AS(generate(m, std::vector<TokenId>{}, 3, SamplerConfig{}), ArgumentError);
}

TEST_CASE("generation respects max_seq") {
  const ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 14));
  const auto prompt = some_tokens(20, 5);
  const auto r = generate(ple, prompt, 50, SamplerConfig{});
  CHECK(prompt.size() + r.tokens.size() <= 24);
  CHECK_THROWS_AS(generate(ple, some_tokens(30, 5), 1, SamplerConfig{}), CapacityError);
}

TEST_CASE("greedy decoding is deterministic") {
  const ModelParams ple = clone_from_dense(ModelParams::random_dense(small_config(), 15));
  const auto prompt = some_tokens(6, 6);
  CHECK(generate(ple, prompt, 8, SamplerConfig{}).tokens ==
        generate(ple, prompt, 8, SamplerConfig{}).tokens);
}

}  // TEST_SUITE
