#include <chrono>
#include <random>
#include <set>
#include <tuple>

#include "ple/error.hpp"
#include "ple/leakage.hpp"

namespace ple {

void SynthTaskSpec::validate() const {
  if (problems == 0) throw ConfigError("synth problems must be positive");
  if (filler_words < 2) throw ConfigError("synth filler_words must be at least 2");
  if (think_repeats == 0) throw ConfigError("synth think_repeats must be positive");
  const std::size_t space = 100 * filler_words * filler_words;
  if (problems + held_out > space) {
    throw ConfigError("synth task asks for " + std::to_string(problems + held_out) +
                      " distinct problems but only " + std::to_string(space) + " exist");
  }
}

nlohmann::json to_json(const SynthTaskSpec& s) {
  return {{"problems", s.problems},         {"held_out", s.held_out},
          {"seed", s.seed},                 {"filler_words", s.filler_words},
          {"think_repeats", s.think_repeats}};
}

SynthTaskSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthTaskSpec s;
  try {
    s.problems = j.value("problems", s.problems);
    s.held_out = j.value("held_out", s.held_out);
    s.seed = j.value("seed", s.seed);
    s.filler_words = j.value("filler_words", s.filler_words);
    s.think_repeats = j.value("think_repeats", s.think_repeats);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

struct Problem {
  std::size_t f1, f2;
  int a, b;
  auto key() const { return std::tuple(f1, f2, a, b); }
};

std::string filler(std::size_t i) { return "f" + std::to_string(i); }

std::string prompt_text(const Problem& p) {
  return "q " + filler(p.f1) + " " + filler(p.f2) + " " + std::to_string(p.a) + " plus " +
         std::to_string(p.b) + " mod 10";
}

}  // namespace

SynthTask generate_synth_task(const SynthTaskSpec& spec) {
  spec.validate();
  const std::vector<std::string> markers = ReflectiveLexicon().markers();

  std::vector<std::string> words{"q", "plus", "mod", "is", "check", "answer:"};
  for (const auto& m : markers) words.push_back(m);
  for (int n = 0; n <= 18; ++n) words.push_back(std::to_string(n));
  for (std::size_t i = 0; i < spec.filler_words; ++i) words.push_back(filler(i));

  std::mt19937_64 rng(spec.seed);
  std::set<std::tuple<std::size_t, std::size_t, int, int>> seen;
  auto draw = [&] {
    for (;;) {
      Problem p{rng() % spec.filler_words, rng() % spec.filler_words, static_cast<int>(rng() % 10),
                static_cast<int>(rng() % 10)};
      if (seen.insert(p.key()).second) return p;
    }
  };

  SynthTask task{{}, {}, Vocabulary(words)};
  for (std::size_t i = 0; i < spec.problems; ++i) {
    const Problem p = draw();
    const int s = p.a + p.b, r = s % 10;
    const std::string rs = std::to_string(r), ss = std::to_string(s);
    std::string think = std::to_string(p.a) + " plus " + std::to_string(p.b) + " is " + ss;
    for (std::size_t k = 0; k < spec.think_repeats; ++k) {
      think += " " + markers[rng() % markers.size()] + " check " + ss + " mod 10 is " + rs;
    }
    think += " answer: " + rs;
    const std::string prompt = prompt_text(p);
    task.train.push_back({prompt, think, Route::Think, rs, 0});
    task.train.push_back({prompt, "answer: " + rs, Route::NoThink, rs, 0});
  }
  for (std::size_t i = 0; i < spec.held_out; ++i) {
    const Problem p = draw();
    const std::string rs = std::to_string((p.a + p.b) % 10);
    task.held_out.push_back({prompt_text(p), "answer: " + rs, Route::NoThink, rs, 0});
  }
  return task;
}

DemoConfig default_demo_config(std::uint64_t seed) {
  DemoConfig c;
  c.seed = seed;
  c.task.seed = seed;
  c.model.d_model = 64;
  c.model.n_heads = 4;
  c.model.d_ff = 128;
  c.model.n_layers = 2;
  c.model.max_seq = 32;
  c.train.learning_rate = 0.05;
  c.train.batch_size = 8;
  c.train.optimizer = Optimizer::kSgdMomentum;
  c.train.momentum = 0.9;
  c.train.seed = seed;
  c.decode.max_new = 24;
  return c;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

DemoResult run_synthetic_demo(const DemoConfig& config, const DemoProgress& progress) {
  if (config.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  const SynthTask task = generate_synth_task(config.task);
  PleConfig model = config.model;
  model.vocab_size = task.vocab.size();
  model.validate();
  const auto data = encode_dataset(task.train, task.vocab);
  const auto think_prompts = eval_prompts(task.held_out, task.vocab, Route::Think);
  const auto no_think_prompts = eval_prompts(task.held_out, task.vocab, Route::NoThink);
  const std::span<const EvalPrompt> monitor(
      think_prompts.data(), std::min(config.monitor_prompts, think_prompts.size()));
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };

  const ModelParams dense = ModelParams::random_dense(model, config.seed);
  TrainConfig tc = config.train;
  tc.epochs = config.max_epochs;

  DemoResult out;
  auto t0 = Clock::now();
  const EpochCallback stop_when_accurate = [&](const EpochSummary& e, const ModelParams& p) {
    const double acc = evaluate(p, monitor, Route::Think, task.vocab, config.decode).accuracy;
    char buf[160];
    std::snprintf(buf, sizeof buf, "ple epoch %zu loss no_think=%.4f think=%.4f monitor_acc=%.3f",
                  e.epoch + 1, e.mean_loss[0], e.mean_loss[1], acc);
    say(buf);
    return acc < config.think_accuracy_target;
  };
  TrainResult ple = train(clone_from_dense(dense), data, tc, stop_when_accurate);
  out.epochs = ple.epochs.size();
  out.train_seconds = seconds_since(t0);
  out.ple_think = {"ple", evaluate(ple.params, think_prompts, Route::Think, task.vocab, config.decode)};
  out.ple_no_think = {"ple", evaluate(ple.params, no_think_prompts, Route::NoThink, task.vocab,
                                      config.decode)};

  if (config.train_dense_baseline) {
    t0 = Clock::now();
    TrainConfig dc = config.train;
    dc.epochs = out.epochs;
    const EpochCallback log_dense = [&](const EpochSummary& e, const ModelParams&) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "dense epoch %zu loss no_think=%.4f think=%.4f", e.epoch + 1,
                    e.mean_loss[0], e.mean_loss[1]);
      say(buf);
      return true;
    };
    TrainResult base = train(dense, data, dc, log_dense);
    out.dense_seconds = seconds_since(t0);
    out.dense_think = NamedReport{
        "dense", evaluate(base.params, think_prompts, Route::Think, task.vocab, config.decode)};
    out.dense_no_think = NamedReport{
        "dense", evaluate(base.params, no_think_prompts, Route::NoThink, task.vocab, config.decode)};
  }
  return out;
}

}  // namespace ple
