#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ple/model.hpp"
#include "ple/tokenizer.hpp"
#include "ple/trainer.hpp"

namespace ple {

/// Reflective marker words, matched as whole tokens, case-insensitively.
class ReflectiveLexicon {
 public:
  ReflectiveLexicon();  // wait, hmm, alternatively
  explicit ReflectiveLexicon(std::vector<std::string> markers);
  // One marker per line; blank lines and lines starting with '#' are skipped.
  static ReflectiveLexicon load(const std::filesystem::path& path);

  bool matches(std::string_view token) const;
  const std::vector<std::string>& markers() const { return markers_; }

 private:
  std::vector<std::string> markers_;  // lower-cased
};

std::size_t count_reflective(std::string_view text, const ReflectiveLexicon& lexicon);

// Token following the last "answer:" token, if any.
std::optional<std::string> extract_answer(std::string_view text);

struct LeakageReport {
  Route mode = Route::NoThink;
  double accuracy = 0.0;
  double mean_length = 0.0;      // generated tokens per answer, EOS excluded
  double refl_per_answer = 0.0;
  std::size_t scored = 0;        // prompts that produced an answer record
  std::size_t skipped = 0;       // prompts dropped after a capacity error

  nlohmann::json to_json() const;
};

struct EvalPrompt {
  std::vector<TokenId> prompt_ids;
  std::string gold;
};

// Drops trailing control tokens and appends the one for `mode`.
std::vector<TokenId> with_control(std::span<const TokenId> prompt, Route mode);

// Produces the generated continuation (without EOS) for a prompt.
using Responder = std::function<std::vector<TokenId>(std::span<const TokenId> prompt)>;

/// Exact-match accuracy on extracted answers, mean generated length and mean
/// reflective count. Prompts must route to `mode` (ArgumentError otherwise);
/// CapacityError from the responder skips the prompt and counts it.
LeakageReport evaluate(const Responder& respond, std::span<const EvalPrompt> prompts, Route mode,
                       const Vocabulary& vocab, const ReflectiveLexicon& lexicon = {});

struct DecodeSettings {
  std::size_t max_new = 32;
  SamplerConfig sampler;
};

LeakageReport evaluate(const ModelParams& params, std::span<const EvalPrompt> prompts, Route mode,
                       const Vocabulary& vocab, const DecodeSettings& decode,
                       const ReflectiveLexicon& lexicon = {});

// Held-out prompts with gold answers taken from dataset records.
std::vector<EvalPrompt> eval_prompts(std::span<const TextExample> records, const Vocabulary& vocab,
                                     Route mode);

struct Candidate {
  std::string prompt;
  std::string response;
  std::string gold;
};

enum class FilterReason { kCorrectness, kLength, kStyle };
std::string_view filter_reason_name(FilterReason r);

struct FilterVerdict {
  std::size_t index = 0;
  bool kept = false;
  std::optional<FilterReason> reason;

  nlohmann::json to_json() const;
};

struct FilterResult {
  std::vector<std::size_t> kept;  // candidate indices, input order
  std::vector<FilterVerdict> audit;
};

/// Applies correctness, length (whitespace tokens <= max_len) and style (no
/// reflective marker) in that order; a rejection names the first failure.
FilterResult filter_no_think_candidates(std::span<const Candidate> candidates, std::size_t max_len,
                                        const ReflectiveLexicon& lexicon = {});

inline constexpr std::size_t kDefaultNoThinkMaxLen = 8;

struct NamedReport {
  std::string model;
  LeakageReport report;
};

struct DeltaRow {
  std::string model;
  Route mode = Route::NoThink;
  double accuracy = 0.0, mean_length = 0.0, refl_per_answer = 0.0;
  double d_accuracy = 0.0, d_mean_length = 0.0, d_refl_per_answer = 0.0;
};

// Deltas against the baseline model's report for the same mode. A missing
// baseline (or baseline mode) raises ArgumentError.
std::vector<DeltaRow> leakage_delta_table(std::span<const NamedReport> reports,
                                          std::string_view baseline);
std::string delta_table_csv(std::span<const DeltaRow> rows);
std::string delta_table_text(std::span<const DeltaRow> rows);

// model,mode,accuracy,mean_length,refl_per_answer
std::string reports_csv(std::span<const NamedReport> reports);

/// Desk-scale modular-addition QA. Prompt: "q <filler> <filler> a plus b mod 10";
/// think target walks through the sum with a reflective marker, the no-think
/// target is "answer: r".
struct SynthTaskSpec {
  std::size_t problems = 1000;  // training problems, each yields one example per mode
  std::size_t held_out = 200;   // distinct evaluation prompts
  std::uint64_t seed = 0;
  std::size_t filler_words = 16;
  std::size_t think_repeats = 1;  // repetitions of the verification clause

  void validate() const;
};

nlohmann::json to_json(const SynthTaskSpec& s);
SynthTaskSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthTask {
  std::vector<TextExample> train;     // think and no-think example per problem
  std::vector<TextExample> held_out;  // one no-think record per held-out problem
  Vocabulary vocab;
};

SynthTask generate_synth_task(const SynthTaskSpec& spec);

/// Settings for the end-to-end demonstration: train a cloned PLE model until
/// held-out think accuracy reaches `think_accuracy_target` (or max_epochs),
/// then evaluate both modes; a dense model trained for the same epochs is
/// reported alongside.
struct DemoConfig {
  SynthTaskSpec task;
  PleConfig model;
  TrainConfig train;
  std::size_t max_epochs = 40;
  double think_accuracy_target = 0.95;
  std::size_t monitor_prompts = 100;  // held-out prompts checked after each epoch
  DecodeSettings decode;
  bool train_dense_baseline = true;
  std::uint64_t seed = 0;
};

// Defaults used by the acceptance demo (2 layers, d_model 64).
DemoConfig default_demo_config(std::uint64_t seed);

struct DemoResult {
  NamedReport ple_think, ple_no_think;
  std::optional<NamedReport> dense_think, dense_no_think;
  std::size_t epochs = 0;
  double train_seconds = 0.0;
  double dense_seconds = 0.0;
};

using DemoProgress = std::function<void(const std::string& line)>;
DemoResult run_synthetic_demo(const DemoConfig& config, const DemoProgress& progress = {});

}  // namespace ple
