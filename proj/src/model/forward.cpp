#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "ple/error.hpp"
#include "ple/model.hpp"
#include "ple/numeric/ops.hpp"

namespace ple {
namespace {

void check_capacity(const ModelParams& params, std::size_t length) {
  if (length > params.config().max_seq) {
    throw CapacityError("sequence of " + std::to_string(length) + " tokens exceeds max_seq " +
                        std::to_string(params.config().max_seq));
  }
}

Var embed(ParamBinding& bind, const ModelParams& params, std::span<const TokenId> tokens) {
  return ops::embedding(bind(params.embed_segment()), tokens);
}

// h + Attn(LN1(h))
Var attention_block(ParamBinding& bind, const ModelParams& params, std::size_t l, Var h) {
  const auto& ls = params.layer(l);
  const auto& cfg = params.config();
  Var x = ops::rms_norm(h, bind(ls.attn_norm));
  Var q = ops::rope(ops::linear(x, bind(ls.wq)), cfg.n_heads, cfg.rope_base);
  Var k = ops::rope(ops::linear(x, bind(ls.wk)), cfg.n_heads, cfg.rope_base);
  Var v = ops::linear(x, bind(ls.wv));
  Var a = ops::causal_attention(q, k, v, cfg.n_heads);
  return ops::add(h, ops::linear(a, bind(ls.wo)));
}

// MLP_slot(LN2(h)); the caller adds the residual.
Var expert_block(ParamBinding& bind, const ModelParams& params, std::size_t l, std::size_t slot,
                 Var h) {
  const auto& ls = params.layer(l);
  const auto& es = ls.experts.at(slot);
  Var x = ops::rms_norm(h, bind(ls.mlp_norm));
  Var gate = ops::silu(ops::linear(x, bind(es.w_gate)));
  Var up = ops::linear(x, bind(es.w_up));
  return ops::linear(ops::mul(gate, up), bind(es.w_down));
}

Var head(ParamBinding& bind, const ModelParams& params, Var h) {
  if (params.config().final_norm) h = ops::rms_norm(h, bind(params.final_norm_segment()));
  return ops::linear(h, bind(params.lm_head_segment()));
}

}  // namespace

Var forward_on_tape(ParamBinding& bind, const ModelParams& params, std::span<const TokenId> tokens,
                    Route route, ExpertAudit* audit) {
  check_capacity(params, tokens.size());
  const std::size_t slot = params.expert_slot(route);
  Var h = embed(bind, params, tokens);
  for (std::size_t l = 0; l < params.config().n_layers; ++l) {
    h = attention_block(bind, params, l, h);
    h = ops::add(h, expert_block(bind, params, l, slot, h));
    if (audit) audit->expert_rows[slot] += tokens.size();
  }
  if (audit) audit->tokens += tokens.size();
  return head(bind, params, h);
}

Var forward_token_routed(ParamBinding& bind, const ModelParams& params,
                         std::span<const TokenId> tokens, std::span<const Route> routes) {
  check_capacity(params, tokens.size());
  if (routes.size() != tokens.size()) {
    throw DimensionError("token-level routing needs one route per token: " +
                         std::to_string(routes.size()) + " routes for " +
                         std::to_string(tokens.size()) + " tokens");
  }
  const std::size_t d = params.config().d_model;
  std::array<Var, 2> masks;
  for (std::size_t slot = 0; slot < 2; ++slot) {
    Tensor m({tokens.size(), d});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (params.expert_slot(routes[t]) == slot) std::fill_n(m.row(t).begin(), d, 1.0);
    }
    masks[slot] = bind.tape().constant(std::move(m));
  }
  const bool any_think = std::any_of(routes.begin(), routes.end(),
                                     [&](Route r) { return params.expert_slot(r) == 1; });
  const bool any_no_think = std::any_of(routes.begin(), routes.end(),
                                        [&](Route r) { return params.expert_slot(r) == 0; });
  Var h = embed(bind, params, tokens);
  for (std::size_t l = 0; l < params.config().n_layers; ++l) {
    h = attention_block(bind, params, l, h);
    // Only experts that own at least one position enter the graph.
    std::optional<Var> mixed;
    if (any_no_think) mixed = ops::mul(expert_block(bind, params, l, 0, h), masks[0]);
    if (any_think) {
      Var part = ops::mul(expert_block(bind, params, l, 1, h), masks[1]);
      mixed = mixed ? ops::add(*mixed, part) : part;
    }
    if (mixed) h = ops::add(h, *mixed);
  }
  return head(bind, params, h);
}

Tensor forward(const ModelParams& params, std::span<const TokenId> tokens, Route route,
               ExpertAudit* audit) {
  Tape tape(false);
  ParamBinding bind(tape, params.values());
  return forward_on_tape(bind, params, tokens, route, audit).value();
}

std::vector<double> route_logit_gap(const ModelParams& params, std::span<const TokenId> tokens) {
  const Tensor think = forward(params, tokens, Route::Think);
  const Tensor no_think = forward(params, tokens, Route::NoThink);
  std::vector<double> gap(think.rows(), 0.0);
  for (std::size_t t = 0; t < think.rows(); ++t) {
    for (std::size_t c = 0; c < think.cols(); ++c) {
      gap[t] = std::max(gap[t], std::abs(think.at(t, c) - no_think.at(t, c)));
    }
  }
  return gap;
}

Tensor last_block_input(const ModelParams& params, std::span<const TokenId> tokens, Route route) {
  check_capacity(params, tokens.size());
  Tape tape(false);
  ParamBinding bind(tape, params.values());
  const std::size_t slot = params.expert_slot(route);
  const std::size_t last = params.config().n_layers - 1;
  Var h = embed(bind, params, tokens);
  for (std::size_t l = 0; l < last; ++l) {
    h = attention_block(bind, params, l, h);
    h = ops::add(h, expert_block(bind, params, l, slot, h));
  }
  return attention_block(bind, params, last, h).value();
}

Tensor last_block_output(const ModelParams& params, const Tensor& residual, Route route) {
  Tape tape(false);
  ParamBinding bind(tape, params.values());
  Var u = tape.constant(residual);
  return expert_block(bind, params, params.config().n_layers - 1, params.expert_slot(route), u)
      .value();
}

Tensor downstream_map(const ModelParams& params, const Tensor& hidden) {
  Tape tape(false);
  ParamBinding bind(tape, params.values());
  return head(bind, params, tape.constant(hidden)).value();
}

}  // namespace ple
