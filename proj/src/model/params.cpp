#include <cmath>
#include <random>

#include "ple/error.hpp"
#include "ple/model.hpp"
#include "ple/numeric/kernels.hpp"

namespace ple {

void PleConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(max_seq, "max_seq");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (!(rope_base > 0)) throw ConfigError("rope_base must be positive");
}

nlohmann::json to_json(const PleConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},           {"max_seq", c.max_seq},
          {"rope_base", c.rope_base},   {"final_norm", c.final_norm}};
}

PleConfig config_from_json(const nlohmann::json& j) {
  PleConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.final_norm = j.value("final_norm", c.final_norm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view block_label(Block b) {
  switch (b) {
    case Block::kShared: return "alpha";
    case Block::kExpert0: return "beta0";
    case Block::kExpert1: return "beta1";
    case Block::kDense: return "beta";
  }
  return "alpha";
}

Block parse_block_label(std::string_view label) {
  if (label == "alpha") return Block::kShared;
  if (label == "beta0") return Block::kExpert0;
  if (label == "beta1") return Block::kExpert1;
  if (label == "beta") return Block::kDense;
  throw FormatError("unknown partition label '" + std::string(label) + "'");
}

Tensor mlp_expert(const ExpertMlp& e, std::span<const double> x) {
  const std::size_t d_ff = e.w_gate.rows();
  const std::size_t d = e.w_gate.cols();
  if (x.size() != d || e.w_up.shape() != e.w_gate.shape() || e.w_down.rows() != d ||
      e.w_down.cols() != d_ff) {
    throw DimensionError("mlp_expert: input width " + std::to_string(x.size()) +
                         " vs gate " + shape_string(e.w_gate.shape()) + ", up " +
                         shape_string(e.w_up.shape()) + ", down " + shape_string(e.w_down.shape()));
  }
  std::vector<double> hidden(d_ff);
  for (std::size_t i = 0; i < d_ff; ++i) {
    double g = 0.0, u = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      g += e.w_gate.at(i, j) * x[j];
      u += e.w_up.at(i, j) * x[j];
    }
    hidden[i] = kernels::silu(g) * u;
  }
  Tensor out({d});
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d_ff; ++j) acc += e.w_down.at(i, j) * hidden[j];
    out[i] = acc;
  }
  return out;
}

ModelParams::ModelParams(const PleConfig& config, std::size_t num_experts)
    : config_(config), num_experts_(num_experts) {
  config_.validate();
  if (num_experts != 1 && num_experts != 2) {
    throw ConfigError("a model has 1 (dense) or 2 (PLE) experts per layer, got " +
                      std::to_string(num_experts));
  }
  const std::size_t d = config_.d_model, f = config_.d_ff, V = config_.vocab_size;
  auto add = [&](std::string name, Shape shape, Block b) {
    blocks_.push_back(b);
    return values_.add(std::move(name), Tensor(std::move(shape)));
  };
  embed_ = add("embed", {V, d}, Block::kShared);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerSegments ls;
    ls.attn_norm = add(p + "attn_norm", {d}, Block::kShared);
    ls.wq = add(p + "wq", {d, d}, Block::kShared);
    ls.wk = add(p + "wk", {d, d}, Block::kShared);
    ls.wv = add(p + "wv", {d, d}, Block::kShared);
    ls.wo = add(p + "wo", {d, d}, Block::kShared);
    ls.mlp_norm = add(p + "mlp_norm", {d}, Block::kShared);
    for (std::size_t e = 0; e < num_experts; ++e) {
      const std::string q = num_experts == 1 ? p + "mlp." : p + "expert" + std::to_string(e) + ".";
      const Block b = num_experts == 1 ? Block::kDense : (e == 0 ? Block::kExpert0 : Block::kExpert1);
      ExpertSegments es;
      es.w_gate = add(q + "w_gate", {f, d}, b);
      es.w_up = add(q + "w_up", {f, d}, b);
      es.w_down = add(q + "w_down", {d, f}, b);
      ls.experts.push_back(es);
    }
    layers_.push_back(std::move(ls));
  }
  final_norm_ = add("final_norm", {d}, Block::kShared);
  lm_head_ = add("lm_head", {V, d}, Block::kShared);
}

ModelParams ModelParams::random_dense(const PleConfig& config, std::uint64_t seed) {
  ModelParams m(config, 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t s = 0; s < m.values_.num_segments(); ++s) {
    Tensor& t = m.values_[s];
    if (t.rank() == 1) {
      t.fill(1.0);  // norm gains
      continue;
    }
    const double std_dev = s == m.embed_ ? 1.0 : 1.0 / std::sqrt(static_cast<double>(t.cols()));
    for (double& v : t.data()) v = std_dev * normal(rng);
  }
  return m;
}

ModelParams ModelParams::from_segments(const PleConfig& config, std::size_t num_experts,
                                       ParamVector values) {
  ModelParams m(config, num_experts);
  if (!m.values_.same_layout(values)) {
    throw FormatError("parameter segments do not match the layout implied by the config");
  }
  m.values_ = std::move(values);
  return m;
}

std::vector<std::string> ModelParams::segment_names(Block b) const {
  std::vector<std::string> out;
  for (std::size_t i : segment_indices(b)) out.push_back(values_.name(i));
  return out;
}

std::vector<std::size_t> ModelParams::segment_indices(Block b) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i] == b) out.push_back(i);
  }
  return out;
}

ExpertMlp ModelParams::expert(std::size_t layer, std::size_t slot) const {
  const auto& es = layers_.at(layer).experts.at(slot);
  return {values_[es.w_gate], values_[es.w_up], values_[es.w_down]};
}

void ModelParams::set_expert(std::size_t layer, std::size_t slot, const ExpertMlp& e) {
  const auto& es = layers_.at(layer).experts.at(slot);
  if (e.w_gate.shape() != values_[es.w_gate].shape() ||
      e.w_up.shape() != values_[es.w_up].shape() ||
      e.w_down.shape() != values_[es.w_down].shape()) {
    throw DimensionError("set_expert: expert shapes do not match the model config");
  }
  values_[es.w_gate] = e.w_gate;
  values_[es.w_up] = e.w_up;
  values_[es.w_down] = e.w_down;
}

std::size_t ModelParams::expert_param_count() const { return 3 * config_.d_model * config_.d_ff; }

ModelParams clone_from_dense(const ModelParams& dense) {
  if (!dense.is_dense()) throw ConfigError("clone_from_dense expects a dense source model");
  ModelParams ple(dense.config(), 2);
  auto copy = [&](std::size_t to, std::size_t from) { ple.values_[to] = dense.values_[from]; };
  copy(ple.embed_, dense.embed_);
  copy(ple.final_norm_, dense.final_norm_);
  copy(ple.lm_head_, dense.lm_head_);
  for (std::size_t l = 0; l < dense.layers_.size(); ++l) {
    const auto& src = dense.layers_[l];
    const auto& dst = ple.layers_[l];
    copy(dst.attn_norm, src.attn_norm);
    copy(dst.wq, src.wq);
    copy(dst.wk, src.wk);
    copy(dst.wv, src.wv);
    copy(dst.wo, src.wo);
    copy(dst.mlp_norm, src.mlp_norm);
    for (const auto& e : dst.experts) {
      copy(e.w_gate, src.experts[0].w_gate);
      copy(e.w_up, src.experts[0].w_up);
      copy(e.w_down, src.experts[0].w_down);
    }
  }
  return ple;
}

}  // namespace ple
