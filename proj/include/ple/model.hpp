#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ple/numeric/autodiff.hpp"
#include "ple/numeric/param_vector.hpp"
#include "ple/numeric/tape.hpp"
#include "ple/numeric/tensor.hpp"
#include "ple/types.hpp"

namespace ple {

struct PleConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 16;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_ff = 32;
  std::size_t max_seq = 64;
  double rope_base = 10000.0;
  // When false the last hidden state feeds the LM head directly (affine
  // downstream map; used by the linearization checks).
  bool final_norm = true;

  void validate() const;
  bool operator==(const PleConfig&) const = default;
};

nlohmann::json to_json(const PleConfig& config);
PleConfig config_from_json(const nlohmann::json& j);

// Partition label of a parameter segment.
enum class Block : std::uint8_t {
  kShared,   // alpha: embeddings, attention, norms, LM head
  kExpert0,  // beta0: no-think expert
  kExpert1,  // beta1: think expert
  kDense,    // beta: the single MLP of a dense source model
};

std::string_view block_label(Block b);
Block parse_block_label(std::string_view label);

struct ExpertMlp {
  Tensor w_gate;  // [d_ff x d_model]
  Tensor w_up;    // [d_ff x d_model]
  Tensor w_down;  // [d_model x d_ff]
};

// W_down (silu(W_gate x) * (W_up x)) for a single d_model vector.
Tensor mlp_expert(const ExpertMlp& expert, std::span<const double> x);

/// All learnable parameters of a dense (one MLP per layer) or PLE (two
/// experts per layer) decoder, with each segment labelled alpha/beta.
class ModelParams {
 public:
  struct ExpertSegments {
    std::size_t w_gate, w_up, w_down;
  };
  struct LayerSegments {
    std::size_t attn_norm, wq, wk, wv, wo, mlp_norm;
    std::vector<ExpertSegments> experts;
  };

  // Dense source model with Gaussian initialisation scaled by fan-in.
  static ModelParams random_dense(const PleConfig& config, std::uint64_t seed);
  // Rebuilds from named segments (checkpoint loading). Validates names and shapes.
  static ModelParams from_segments(const PleConfig& config, std::size_t num_experts,
                                   ParamVector values);

  const PleConfig& config() const { return config_; }
  std::size_t num_experts() const { return num_experts_; }
  bool is_dense() const { return num_experts_ == 1; }

  ParamVector& values() { return values_; }
  const ParamVector& values() const { return values_; }
  Block block(std::size_t segment) const { return blocks_[segment]; }
  std::vector<std::string> segment_names(Block b) const;
  std::vector<std::size_t> segment_indices(Block b) const;

  std::size_t embed_segment() const { return embed_; }
  std::size_t final_norm_segment() const { return final_norm_; }
  std::size_t lm_head_segment() const { return lm_head_; }
  const LayerSegments& layer(std::size_t l) const { return layers_[l]; }

  // Expert slot used by `route`; a dense model always uses slot 0.
  std::size_t expert_slot(Route route) const { return is_dense() ? 0 : route_index(route); }
  ExpertMlp expert(std::size_t layer, std::size_t slot) const;
  void set_expert(std::size_t layer, std::size_t slot, const ExpertMlp& expert);
  std::size_t expert_param_count() const;

  bool operator==(const ModelParams& other) const {
    return config_ == other.config_ && num_experts_ == other.num_experts_ &&
           values_ == other.values_;
  }

 private:
  ModelParams(const PleConfig& config, std::size_t num_experts);
  friend ModelParams clone_from_dense(const ModelParams& dense);

  PleConfig config_;
  std::size_t num_experts_ = 1;
  ParamVector values_;
  std::vector<Block> blocks_;
  std::size_t embed_ = 0, final_norm_ = 0, lm_head_ = 0;
  std::vector<LayerSegments> layers_;
};

// Duplicates each dense MLP into both experts; shared segments copied unchanged.
ModelParams clone_from_dense(const ModelParams& dense);

// Counts expert applications: one per token row per layer.
struct ExpertAudit {
  std::array<std::size_t, 2> expert_rows{};  // indexed by expert slot
  std::size_t tokens = 0;                    // token rows pushed through the model
  std::size_t total_expert_rows() const { return expert_rows[0] + expert_rows[1]; }
};

// Route-locked decoder forward on a tape. Returns [T x vocab] logits.
Var forward_on_tape(ParamBinding& bind, const ModelParams& params, std::span<const TokenId> tokens,
                    Route route, ExpertAudit* audit = nullptr);

// Token-level routing contrast: position t uses the expert of routes[t].
Var forward_token_routed(ParamBinding& bind, const ModelParams& params,
                         std::span<const TokenId> tokens, std::span<const Route> routes);

Tensor forward(const ModelParams& params, std::span<const TokenId> tokens, Route route,
               ExpertAudit* audit = nullptr);

// Per-position max |logits(think) - logits(no_think)|.
std::vector<double> route_logit_gap(const ModelParams& params, std::span<const TokenId> tokens);

// Pieces of the last decoder layer, exposed for the linearization checks:
// the residual stream entering the last MLP block, the routed block output
// f_r(u) = MLP_r(LN2(u)), and the downstream map G (final norm + LM head).
Tensor last_block_input(const ModelParams& params, std::span<const TokenId> tokens, Route route);
Tensor last_block_output(const ModelParams& params, const Tensor& residual, Route route);
Tensor downstream_map(const ModelParams& params, const Tensor& hidden);

struct SamplerConfig {
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct GenerateOptions {
  bool use_kv_cache = true;
  ExpertAudit* audit = nullptr;
};

struct GenerationResult {
  std::vector<TokenId> tokens;  // generated tokens, excluding a terminating EOS
  Route route = Route::NoThink;
  bool hit_eos = false;
};

/// Autoregressive decoding. The route is resolved once from the prompt and
/// reused for every step; generated control tokens never re-route.
GenerationResult generate(const ModelParams& params, std::span<const TokenId> prompt,
                          std::size_t max_new, const SamplerConfig& sampler,
                          const GenerateOptions& options = {});

}  // namespace ple
