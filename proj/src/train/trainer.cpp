#include <algorithm>
#include <cmath>
#include <limits>

#include "ple/error.hpp"
#include "ple/trainer.hpp"

namespace ple {
namespace {

ops::Reduction ce_reduction(LossReduction r) {
  return r == LossReduction::kTokenSum ? ops::Reduction::kSum : ops::Reduction::kMean;
}

double segment_norm_sq(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

Var mode_loss_on_tape(ParamBinding& bind, const ModelParams& params,
                      std::span<const ChatExample> batch, LossReduction reduction) {
  if (batch.empty()) throw ArgumentError("mode loss of an empty batch");
  const Route mode = batch.front().mode;
  for (std::size_t i = 1; i < batch.size(); ++i) {
    if (batch[i].mode != mode) {
      throw BatchingError("batch mixes modes: example 0 is " + std::string(route_name(mode)) +
                          ", example " + std::to_string(i) + " is " +
                          std::string(route_name(batch[i].mode)));
    }
  }
  std::optional<Var> total;
  for (const auto& ex : batch) {
    const LmBatchRow row = lm_row(ex);
    Var logits = forward_on_tape(bind, params, row.inputs, mode);
    Var ce = ops::softmax_cross_entropy(logits, row.targets, row.mask, ce_reduction(reduction));
    total = total ? ops::add(*total, ce) : ce;
  }
  return ops::scale(*total, 1.0 / static_cast<double>(batch.size()));
}

LossFn mode_loss_fn(const ModelParams& params, std::vector<ChatExample> batch,
                    LossReduction reduction) {
  return [&params, batch = std::move(batch), reduction](Tape&, ParamBinding& bind) {
    return mode_loss_on_tape(bind, params, batch, reduction);
  };
}

double mode_loss(const ModelParams& params, std::span<const ChatExample> batch,
                 LossReduction reduction) {
  Tape tape(false);
  ParamBinding bind(tape, params.values());
  return mode_loss_on_tape(bind, params, batch, reduction).value().item();
}

LossFn full_objective_fn(const ModelParams& params, std::vector<ChatExample> dataset,
                         LossReduction reduction) {
  if (dataset.empty()) throw ArgumentError("full objective of an empty dataset");
  std::array<std::vector<ChatExample>, 2> pools;
  for (auto& ex : dataset) pools[route_index(ex.mode)].push_back(std::move(ex));
  const double n = static_cast<double>(pools[0].size() + pools[1].size());
  return [&params, pools = std::move(pools), n, reduction](Tape&, ParamBinding& bind) {
    std::optional<Var> total;
    for (const auto& pool : pools) {
      if (pool.empty()) continue;
      const double pi = static_cast<double>(pool.size()) / n;
      Var term = ops::scale(mode_loss_on_tape(bind, params, pool, reduction), pi);
      total = total ? ops::add(*total, term) : term;
    }
    return *total;
  };
}

double full_objective(const ModelParams& params, std::span<const ChatExample> dataset,
                      LossReduction reduction) {
  const LossFn fn =
      full_objective_fn(params, std::vector<ChatExample>(dataset.begin(), dataset.end()), reduction);
  return evaluate_loss(fn, params.values());
}

void sgd_step(ParamVector& params, const ParamVector& grads, double lr) {
  if (!params.same_layout(grads)) throw DimensionError("sgd_step: gradient layout differs from parameters");
  for (std::size_t s = 0; s < params.num_segments(); ++s) {
    auto p = params[s].data();
    auto g = grads[s].data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

ValueAndGrad token_level_route_variant(const ModelParams& params, const ChatExample& example,
                                       std::span<const Route> routes) {
  const LmBatchRow row = lm_row(example);
  if (routes.size() != row.inputs.size()) {
    throw DimensionError("token-level routes: " + std::to_string(routes.size()) +
                         " routes for " + std::to_string(row.inputs.size()) + " input positions");
  }
  const std::vector<Route> r(routes.begin(), routes.end());
  LossFn fn = [&params, &row, r](Tape&, ParamBinding& bind) {
    Var logits = forward_token_routed(bind, params, row.inputs, r);
    return ops::softmax_cross_entropy(logits, row.targets, row.mask, ops::Reduction::kMean);
  };
  return value_and_grad(fn, params.values());
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive finite number");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"optimizer", c.optimizer == Optimizer::kSgd ? "sgd" : "sgd_momentum"},
          {"momentum", c.momentum},
          {"reduction", reduction_name(c.reduction)},
          {"shuffle", c.shuffle},
          {"freeze_shared", c.freeze_shared},
          {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    const std::string opt = j.value("optimizer", std::string("sgd"));
    if (opt == "sgd") {
      c.optimizer = Optimizer::kSgd;
    } else if (opt == "sgd_momentum") {
      c.optimizer = Optimizer::kSgdMomentum;
    } else {
      throw ConfigError("optimizer must be sgd or sgd_momentum, got '" + opt + "'");
    }
    c.momentum = j.value("momentum", c.momentum);
    c.reduction = parse_reduction(j.value("reduction", std::string("example_mean")));
    c.shuffle = j.value("shuffle", c.shuffle);
    c.freeze_shared = j.value("freeze_shared", c.freeze_shared);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrajectoryLog::TrajectoryLog(const ModelParams& initial) {
  if (initial.is_dense()) return;
  const auto b0 = initial.segment_indices(Block::kExpert0);
  const auto b1 = initial.segment_indices(Block::kExpert1);
  for (std::size_t i = 0; i < b0.size(); ++i) {
    expert_pairs_.emplace_back(b0[i], b1[i]);
    const Tensor& a = initial.values()[b0[i]];
    const Tensor& b = initial.values()[b1[i]];
    for (std::size_t k = 0; k < a.size(); ++k) initial_gap_.push_back(b[k] - a[k]);
  }
  cum_diff_.assign(initial_gap_.size(), 0.0);
}

void TrajectoryLog::record(const ModelParams& params, Route mode, double loss,
                           const ParamVector& grad) {
  Record rec;
  rec.step = records_.size();
  rec.mode = mode;
  rec.loss = loss;
  const Block active = params.is_dense() ? Block::kDense
                                         : (mode == Route::Think ? Block::kExpert1 : Block::kExpert0);
  double active_sq = 0.0;
  for (std::size_t s : params.segment_indices(active)) active_sq += segment_norm_sq(grad[s]);
  rec.active_grad_norm = std::sqrt(active_sq);

  std::size_t k = 0;
  double cum_sq = 0.0, gap_sq = 0.0;
  for (const auto& [s0, s1] : expert_pairs_) {
    const auto g = grad[mode == Route::Think ? s1 : s0].data();
    const auto w0 = params.values()[s0].data();
    const auto w1 = params.values()[s1].data();
    const double sign = mode == Route::Think ? 1.0 : -1.0;
    for (std::size_t i = 0; i < g.size(); ++i, ++k) {
      cum_diff_[k] += sign * g[i];
      cum_sq += cum_diff_[k] * cum_diff_[k];
      const double d = w1[i] - w0[i];
      gap_sq += d * d;
    }
  }
  rec.cum_grad_diff_norm = std::sqrt(cum_sq);
  rec.expert_gap_norm = std::sqrt(gap_sq);
  records_.push_back(rec);
}

double TrajectoryLog::identity_residual(const ModelParams& params, double lr) const {
  double worst = 0.0;
  std::size_t k = 0;
  for (const auto& [s0, s1] : expert_pairs_) {
    const auto w0 = params.values()[s0].data();
    const auto w1 = params.values()[s1].data();
    for (std::size_t i = 0; i < w0.size(); ++i, ++k) {
      const double lhs = (w1[i] - w0[i]) - initial_gap_[k];
      worst = std::max(worst, std::abs(lhs + lr * cum_diff_[k]));
    }
  }
  return worst;
}

void TrajectoryLog::write_csv(std::ostream& out) const {
  out << kCsvHeader << '\n';
  out.precision(17);
  for (const auto& r : records_) {
    out << r.step << ',' << route_name(r.mode) << ',' << r.loss << ',' << r.active_grad_norm << ','
        << r.cum_grad_diff_norm << ',' << r.expert_gap_norm << '\n';
  }
}

BatchSchedule::BatchSchedule(std::span<const ChatExample> dataset, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle)
    : streams_{std::mt19937_64(seed * 2 + 1), std::mt19937_64(seed * 2 + 2)},
      batch_size_(batch_size),
      shuffle_(shuffle) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  for (std::size_t i = 0; i < dataset.size(); ++i) pools_[route_index(dataset[i].mode)].push_back(i);
}

std::vector<std::vector<std::size_t>> BatchSchedule::next_epoch() {
  std::array<std::vector<std::vector<std::size_t>>, 2> batches;
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<std::size_t> order = pools_[r];
    if (shuffle_) shuffle_indices(order, streams_[r]);
    for (std::size_t i = 0; i < order.size(); i += batch_size_) {
      const std::size_t end = std::min(order.size(), i + batch_size_);
      batches[r].emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  std::vector<std::vector<std::size_t>> out;
  const std::size_t n = std::max(batches[0].size(), batches[1].size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < 2; ++r) {
      if (i < batches[r].size()) out.push_back(std::move(batches[r][i]));
    }
  }
  return out;
}

Trainer::Trainer(ModelParams& params, TrainConfig config)
    : params_(params), config_(config), log_(params) {
  config_.validate();
  velocity_ = params_.values().zeros_like();
  frozen_.assign(params_.values().num_segments(), false);
  if (config_.freeze_shared) {
    for (std::size_t s : params_.segment_indices(Block::kShared)) frozen_[s] = true;
  }
}

double Trainer::step(std::span<const ChatExample> batch) {
  const LossFn fn = mode_loss_fn(params_, std::vector<ChatExample>(batch.begin(), batch.end()),
                                 config_.reduction);
  ValueAndGrad vg = value_and_grad(fn, params_.values());
  log_.record(params_, batch.front().mode, vg.value, vg.grad);

  double factor = 1.0;
  if (config_.clip_norm > 0) {
    double sq = 0.0;
    for (std::size_t s = 0; s < vg.grad.num_segments(); ++s) {
      if (!frozen_[s]) sq += segment_norm_sq(vg.grad[s]);
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) factor = config_.clip_norm / norm;
  }
  ParamVector& p = params_.values();
  for (std::size_t s = 0; s < p.num_segments(); ++s) {
    // Segments outside this step's graph keep both their value and optimizer state.
    if (frozen_[s] || !vg.touched[s]) continue;
    auto w = p[s].data();
    auto g = vg.grad[s].data();
    if (config_.optimizer == Optimizer::kSgd) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.learning_rate * (factor * g[i]);
    } else {
      auto v = velocity_[s].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = config_.momentum * v[i] + factor * g[i];
        w[i] -= config_.learning_rate * v[i];
      }
    }
  }
  return vg.value;
}

TrainResult train(ModelParams params, std::span<const ChatExample> dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_route_consistency(dataset);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].sequence_length() - 1 > params.config().max_seq) {
      throw DataError("example " + std::to_string(i) + " needs " +
                      std::to_string(dataset[i].sequence_length() - 1) +
                      " positions, more than max_seq " + std::to_string(params.config().max_seq));
    }
  }
  TrainResult result{params, TrajectoryLog(params), {}};
  Trainer trainer(result.params, config);
  BatchSchedule schedule(dataset, config.batch_size, config.seed, config.shuffle);
  std::vector<ChatExample> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochSummary summary;
    summary.epoch = epoch;
    std::array<double, 2> loss_sum{};
    for (const auto& idx : schedule.next_epoch()) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(dataset[i]);
      const double loss = trainer.step(batch);
      const std::size_t r = route_index(batch.front().mode);
      loss_sum[r] += loss;
      ++summary.steps[r];
    }
    for (std::size_t r = 0; r < 2; ++r) {
      summary.mean_loss[r] = summary.steps[r] ? loss_sum[r] / static_cast<double>(summary.steps[r])
                                              : std::numeric_limits<double>::quiet_NaN();
    }
    result.epochs.push_back(summary);
    if (on_epoch && !on_epoch(summary, result.params)) break;
  }
  result.log = trainer.log();
  return result;
}

}  // namespace ple
