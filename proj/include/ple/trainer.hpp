#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ple/model.hpp"
#include "ple/numeric/ops.hpp"
#include "ple/tokenizer.hpp"

namespace ple {

/// One supervised example. The model reads prompt ++ target[:-1] and is
/// scored on target positions only.
struct ChatExample {
  std::vector<TokenId> prompt_ids;  // ends with a control token
  std::vector<TokenId> target_ids;  // includes the terminating EOS
  Route mode = Route::NoThink;
  std::optional<std::string> answer;

  std::size_t sequence_length() const { return prompt_ids.size() + target_ids.size(); }
};

// Inputs, next-token targets and loss mask for one example.
struct LmBatchRow {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  std::vector<bool> mask;
};
LmBatchRow lm_row(const ChatExample& ex);

// Raw dataset record before tokenisation.
struct TextExample {
  std::string prompt;
  std::string target;
  Route mode = Route::NoThink;
  std::optional<std::string> answer;
  std::size_t line = 0;  // 1-based source line when read from a file
};

std::vector<TextExample> read_jsonl_dataset(const std::filesystem::path& path);
void write_jsonl_dataset(const std::filesystem::path& path, std::span<const TextExample> records);

// Every whitespace token appearing in prompts and targets, in first-seen order.
Vocabulary vocabulary_for(std::span<const TextExample> records);

/// BOS + prompt, with the mode's control token appended when the prompt does
/// not already end in one; target + EOS. A control token that disagrees with
/// the tagged mode raises DataError naming `index`.
ChatExample encode_example(const TextExample& rec, const Vocabulary& vocab, std::size_t index);
std::vector<ChatExample> encode_dataset(std::span<const TextExample> records,
                                        const Vocabulary& vocab);

// Raises DataError naming the first example whose prompt route differs from its tag.
void check_route_consistency(std::span<const ChatExample> examples);

enum class LossReduction { kExampleMean, kTokenSum };
std::string_view reduction_name(LossReduction r);
LossReduction parse_reduction(std::string_view name);

/// Mean per-example causal LM loss of a mode-pure batch under its route.
/// Mixed modes raise BatchingError.
Var mode_loss_on_tape(ParamBinding& bind, const ModelParams& params,
                      std::span<const ChatExample> batch,
                      LossReduction reduction = LossReduction::kExampleMean);
LossFn mode_loss_fn(const ModelParams& params, std::vector<ChatExample> batch,
                    LossReduction reduction = LossReduction::kExampleMean);
double mode_loss(const ModelParams& params, std::span<const ChatExample> batch,
                 LossReduction reduction = LossReduction::kExampleMean);

// pi0 * L0 + pi1 * L1 with pi_r = |D_r| / |D|. Empty dataset raises ArgumentError.
LossFn full_objective_fn(const ModelParams& params, std::vector<ChatExample> dataset,
                         LossReduction reduction = LossReduction::kExampleMean);
double full_objective(const ModelParams& params, std::span<const ChatExample> dataset,
                      LossReduction reduction = LossReduction::kExampleMean);

// p <- p - lr * g
void sgd_step(ParamVector& params, const ParamVector& grads, double lr);

/// Gradients with a per-position route (position t of the model input uses
/// the expert of routes[t]); both experts may receive gradient.
ValueAndGrad token_level_route_variant(const ModelParams& params, const ChatExample& example,
                                       std::span<const Route> routes);

enum class Optimizer { kSgd, kSgdMomentum };

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kSgd;
  double momentum = 0.9;
  LossReduction reduction = LossReduction::kExampleMean;
  bool shuffle = true;
  // Only expert segments move; the shared backbone stays fixed.
  bool freeze_shared = false;
  // Global-norm clipping of each step's gradient; 0 disables. Breaks the
  // exact trajectory identity.
  double clip_norm = 0.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Per-step record of a training run plus the running sum of
/// (think-expert gradient - no-think-expert gradient) over expert pairs.
class TrajectoryLog {
 public:
  struct Record {
    std::size_t step = 0;
    Route mode = Route::NoThink;
    double loss = 0.0;
    double active_grad_norm = 0.0;
    double cum_grad_diff_norm = 0.0;
    double expert_gap_norm = 0.0;
    bool operator==(const Record&) const = default;
  };

  TrajectoryLog() = default;
  explicit TrajectoryLog(const ModelParams& initial);

  void record(const ModelParams& params, Route mode, double loss, const ParamVector& grad);

  const std::vector<Record>& records() const { return records_; }
  // Flat sum over steps of g1 - g0, laid out as the think-expert segments.
  const std::vector<double>& cumulative_grad_diff() const { return cum_diff_; }

  /// max |(b1 - b0) - (b1_init - b0_init) + lr * sum(g1 - g0)| over expert
  /// coordinates. Zero up to rounding under plain SGD with a fixed rate.
  double identity_residual(const ModelParams& params, double lr) const;

  void write_csv(std::ostream& out) const;
  static constexpr const char* kCsvHeader =
      "step,mode,loss,active_grad_norm,cum_grad_diff_norm,expert_gap_norm";

  bool operator==(const TrajectoryLog& other) const { return records_ == other.records_; }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> expert_pairs_;  // (beta0 seg, beta1 seg)
  std::vector<double> cum_diff_;
  std::vector<double> initial_gap_;
  std::vector<Record> records_;
};

// Mode-pure minibatches for one epoch: each pool shuffled by its own seeded
// stream, then strictly alternated no-think, think while both remain.
class BatchSchedule {
 public:
  BatchSchedule(std::span<const ChatExample> dataset, std::size_t batch_size,
                std::uint64_t seed, bool shuffle);
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::array<std::vector<std::size_t>, 2> pools_;
  std::array<std::mt19937_64, 2> streams_;
  std::size_t batch_size_;
  bool shuffle_;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::array<double, 2> mean_loss{};  // by route; NaN when the pool is empty
  std::array<std::size_t, 2> steps{};
};

// Return false to stop training after this epoch.
using EpochCallback = std::function<bool(const EpochSummary&, const ModelParams&)>;

class Trainer {
 public:
  Trainer(ModelParams& params, TrainConfig config);

  // One update on a mode-pure batch; returns the batch loss.
  double step(std::span<const ChatExample> batch);

  const TrajectoryLog& log() const { return log_; }
  const TrainConfig& config() const { return config_; }

 private:
  ModelParams& params_;
  TrainConfig config_;
  TrajectoryLog log_;
  ParamVector velocity_;
  std::vector<bool> frozen_;
};

struct TrainResult {
  ModelParams params;
  TrajectoryLog log;
  std::vector<EpochSummary> epochs;
};

/// Runs config.epochs epochs of alternating mode-pure SGD. Route-inconsistent
/// examples raise DataError naming the index.
TrainResult train(ModelParams params, std::span<const ChatExample> dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace ple
