#include <algorithm>
#include <cmath>
#include <random>

#include "ple/error.hpp"
#include "ple/model.hpp"
#include "ple/numeric/kernels.hpp"
#include "ple/tokenizer.hpp"

namespace ple {
namespace {

// Incremental decoder over a fixed route. Weights are transposed once; each
// step runs the same row kernels as the taped forward, so the logits for a
// position match a full recompute exactly.
class CachedDecoder {
 public:
  CachedDecoder(const ModelParams& params, Route route)
      : p_(params), cfg_(params.config()), slot_(params.expert_slot(route)) {
    const auto& v = p_.values();
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& ls = p_.layer(l);
      const auto& es = ls.experts.at(slot_);
      Layer layer;
      layer.wq = kernels::transpose(v[ls.wq]);
      layer.wk = kernels::transpose(v[ls.wk]);
      layer.wv = kernels::transpose(v[ls.wv]);
      layer.wo = kernels::transpose(v[ls.wo]);
      layer.gate = kernels::transpose(v[es.w_gate]);
      layer.up = kernels::transpose(v[es.w_up]);
      layer.down = kernels::transpose(v[es.w_down]);
      layer.keys.assign(cfg_.max_seq * cfg_.d_model, 0.0);
      layer.values.assign(cfg_.max_seq * cfg_.d_model, 0.0);
      layers_.push_back(std::move(layer));
    }
    head_ = kernels::transpose(v[p_.lm_head_segment()]);
  }

  std::size_t position() const { return pos_; }

  // Feeds one token and returns the next-token logits.
  std::vector<double> step(TokenId token, ExpertAudit* audit) {
    if (pos_ >= cfg_.max_seq) {
      throw CapacityError("KV cache full at max_seq " + std::to_string(cfg_.max_seq));
    }
    const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
    const std::size_t hd = d / cfg_.n_heads;
    const auto& v = p_.values();
    const Tensor& table = v[p_.embed_segment()];
    if (token < 0 || static_cast<std::size_t>(token) >= table.rows()) {
      throw IndexError("token id " + std::to_string(token) + " outside vocabulary of " +
                       std::to_string(table.rows()));
    }
    auto emb = table.row(static_cast<std::size_t>(token));
    std::vector<double> h(emb.begin(), emb.end());
    std::vector<double> x(d), q(d), att(d), proj(d), gate(f), up(f), probs(pos_ + 1);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      Layer& L = layers_[l];
      const auto& ls = p_.layer(l);
      kernels::rms_norm_row(h, v[ls.attn_norm].data(), x);
      kernels::linear_rows(x, L.wq, q, 1);
      std::span<double> k_row(L.keys.data() + pos_ * d, d);
      std::span<double> v_row(L.values.data() + pos_ * d, d);
      kernels::linear_rows(x, L.wk, k_row, 1);
      kernels::linear_rows(x, L.wv, v_row, 1);
      kernels::rope_row(q, cfg_.n_heads, pos_, cfg_.rope_base);
      kernels::rope_row(k_row, cfg_.n_heads, pos_, cfg_.rope_base);
      for (std::size_t hh = 0; hh < cfg_.n_heads; ++hh) {
        kernels::attend_row(std::span<const double>(q).subspan(hh * hd, hd),
                            L.keys.data() + hh * hd, L.values.data() + hh * hd, pos_ + 1, d, hd,
                            probs, std::span<double>(att).subspan(hh * hd, hd));
      }
      kernels::linear_rows(att, L.wo, proj, 1);
      for (std::size_t i = 0; i < d; ++i) h[i] += proj[i];

      kernels::rms_norm_row(h, v[ls.mlp_norm].data(), x);
      kernels::linear_rows(x, L.gate, gate, 1);
      kernels::linear_rows(x, L.up, up, 1);
      for (double& g : gate) g = kernels::silu(g);
      for (std::size_t i = 0; i < f; ++i) gate[i] *= up[i];
      kernels::linear_rows(gate, L.down, proj, 1);
      for (std::size_t i = 0; i < d; ++i) h[i] += proj[i];
      if (audit) audit->expert_rows[slot_] += 1;
    }
    if (audit) audit->tokens += 1;
    if (cfg_.final_norm) {
      kernels::rms_norm_row(h, v[p_.final_norm_segment()].data(), x);
    } else {
      x = h;
    }
    std::vector<double> logits(cfg_.vocab_size);
    kernels::linear_rows(x, head_, logits, 1);
    for (double z : logits) {
      if (!std::isfinite(z)) throw NumericError("decode step produced a non-finite logit");
    }
    ++pos_;
    return logits;
  }

 private:
  struct Layer {
    Tensor wq, wk, wv, wo, gate, up, down;
    std::vector<double> keys, values;  // post-rotation keys, [max_seq x d]
  };
  const ModelParams& p_;
  const PleConfig& cfg_;
  std::size_t slot_;
  std::vector<Layer> layers_;
  Tensor head_;
  std::size_t pos_ = 0;
};

TokenId pick(std::span<const double> logits, const SamplerConfig& s, std::mt19937_64& rng) {
  if (s.greedy) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  if (!(s.temperature > 0)) throw ArgumentError("sampling temperature must be positive");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp((logits[i] - top) / s.temperature);
    total += w[i];
  }
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(w.size() - 1);
}

}  // namespace

GenerationResult generate(const ModelParams& params, std::span<const TokenId> prompt,
                          std::size_t max_new, const SamplerConfig& sampler,
                          const GenerateOptions& options) {
  if (prompt.empty()) throw ArgumentError("generate: empty prompt");
  const std::size_t max_seq = params.config().max_seq;
  if (prompt.size() > max_seq) {
    throw CapacityError("prompt of " + std::to_string(prompt.size()) +
                        " tokens exceeds max_seq " + std::to_string(max_seq));
  }
  GenerationResult result;
  result.route = resolve_route(prompt);
  if (max_new == 0) return result;
  std::mt19937_64 rng(sampler.seed);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());

  if (options.use_kv_cache) {
    CachedDecoder dec(params, result.route);
    std::vector<double> logits;
    for (TokenId t : prompt) logits = dec.step(t, options.audit);
    for (std::size_t i = 0; i < max_new; ++i) {
      const TokenId next = pick(logits, sampler, rng);
      if (next == kEosId) {
        result.hit_eos = true;
        break;
      }
      result.tokens.push_back(next);
      if (dec.position() + 1 >= max_seq || i + 1 == max_new) break;
      logits = dec.step(next, options.audit);
    }
    return result;
  }

  for (std::size_t i = 0; i < max_new; ++i) {
    const Tensor logits = forward(params, seq, result.route, options.audit);
    const TokenId next = pick(logits.row(logits.rows() - 1), sampler, rng);
    if (next == kEosId) {
      result.hit_eos = true;
      break;
    }
    result.tokens.push_back(next);
    seq.push_back(next);
    if (seq.size() >= max_seq) break;
  }
  return result;
}

}  // namespace ple
