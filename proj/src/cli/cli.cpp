#include "ple/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ple/checkpoint.hpp"
#include "ple/error.hpp"
#include "ple/leakage.hpp"
#include "ple/numeric/tape.hpp"
#include "ple/theory/suite.hpp"

namespace ple {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exit status for a failed check or audit (errors use 2).
constexpr int kCheckFailed = 1;
constexpr int kUsageError = 2;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out = "ple-out";
  CLI::Option* out_opt = nullptr;
};

// Resolved settings of one invocation: the config document (flags applied)
// plus where its relative paths are anchored.
struct Context {
  json config = json::object();
  fs::path base;
  std::uint64_t seed = 0;
  fs::path out;
  std::ostream* out_stream = nullptr;
  std::ostream* err_stream = nullptr;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Precedence: flag, then config file, then built-in default.
Context resolve(const Globals& g, const std::string& command, bool needs_out) {
  Context c;
  if (!g.config_path.empty()) {
    c.config = read_json_file(g.config_path);
    if (!c.config.is_object()) throw ConfigError(g.config_path + ": config must be a JSON object");
    c.base = fs::path(g.config_path).parent_path();
  }
  if (g.seed_opt->count()) {
    c.seed = g.seed;
  } else if (c.config.contains("seed")) {
    if (!c.config["seed"].is_number_unsigned()) throw ConfigError("config seed must be a non-negative integer");
    c.seed = c.config["seed"].get<std::uint64_t>();
  } else {
    throw ArgumentError(command + ": a seed is required (--seed N or \"seed\" in the config)");
  }
  c.config["seed"] = c.seed;
  if (g.out_opt->count()) {
    c.out = g.out;
  } else if (c.config.contains("out")) {
    c.out = c.base / c.config["out"].get<std::string>();
  } else {
    c.out = g.out;
  }
  c.config["out"] = c.out.string();
  if (needs_out) fs::create_directories(c.out);
  return c;
}

// A path option: the flag wins, else the config key (relative to the config
// file), else empty. Required paths must exist.
fs::path path_setting(Context& c, const std::string& flag_value, const std::string& key,
                      bool required, bool must_exist = true) {
  fs::path p;
  if (!flag_value.empty()) {
    p = flag_value;
  } else if (c.config.contains(key) && c.config[key].is_string()) {
    p = c.base / c.config[key].get<std::string>();
  }
  if (p.empty()) {
    if (required) throw ArgumentError("missing --" + key + " (or \"" + key + "\" in the config)");
    return p;
  }
  if (must_exist && !fs::exists(p)) throw ArgumentError(key + " not found: " + p.string());
  c.config[key] = p.string();
  return p;
}

void echo_config(const Context& c, const std::string& command) {
  write_json(c.out / "run_config.json", {{"command", command}, {"seed", c.seed}, {"config", c.config}});
}

Vocabulary checkpoint_vocab(const fs::path& checkpoint, const fs::path& override_path) {
  const fs::path p = override_path.empty() ? vocab_path_for(checkpoint) : override_path;
  if (!fs::exists(p)) throw ArgumentError("vocabulary not found: " + p.string());
  return Vocabulary::load(p);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string dataset, vocab, init;
  bool dense = false;
  std::optional<std::size_t> epochs, batch_size, d_model, n_layers, n_heads, d_ff, max_seq;
  std::optional<double> lr, momentum, clip_norm;
  std::string optimizer, reduction;
  bool freeze_shared = false;
  bool no_shuffle = false;
};

int cmd_train(const Globals& g, const TrainFlags& f, Context c) {
  std::ostream& out = *c.out_stream;
  const fs::path dataset_path = path_setting(c, f.dataset, "dataset", true);
  const fs::path vocab_path = path_setting(c, f.vocab, "vocab", false);
  const fs::path init_path = path_setting(c, f.init, "init", false);
  (void)g;

  json model_j = c.config.value("model", json::object());
  json train_j = c.config.value("train", json::object());
  auto set = [](json& j, const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  set(model_j, "d_model", f.d_model);
  set(model_j, "n_layers", f.n_layers);
  set(model_j, "n_heads", f.n_heads);
  set(model_j, "d_ff", f.d_ff);
  set(model_j, "max_seq", f.max_seq);
  set(train_j, "epochs", f.epochs);
  set(train_j, "batch_size", f.batch_size);
  set(train_j, "learning_rate", f.lr);
  set(train_j, "momentum", f.momentum);
  set(train_j, "clip_norm", f.clip_norm);
  if (!f.optimizer.empty()) train_j["optimizer"] = f.optimizer;
  if (!f.reduction.empty()) train_j["reduction"] = f.reduction;
  if (f.freeze_shared) train_j["freeze_shared"] = true;
  if (f.no_shuffle) train_j["shuffle"] = false;
  train_j["seed"] = c.seed;

  const auto records = read_jsonl_dataset(dataset_path);
  if (records.empty()) throw DataError(dataset_path.string() + ": dataset is empty");
  const Vocabulary vocab = vocab_path.empty() ? vocabulary_for(records) : Vocabulary::load(vocab_path);
  const auto data = encode_dataset(records, vocab);

  ModelParams start = [&] {
    if (!init_path.empty()) {
      ModelParams p = load_checkpoint(init_path);
      if (p.config().vocab_size != vocab.size()) {
        throw ConfigError("init checkpoint has vocab_size " + std::to_string(p.config().vocab_size) +
                          " but the vocabulary has " + std::to_string(vocab.size()) + " tokens");
      }
      return (p.is_dense() && !f.dense) ? clone_from_dense(p) : p;
    }
    model_j["vocab_size"] = vocab.size();
    const ModelParams dense = ModelParams::random_dense(config_from_json(model_j), c.seed);
    return f.dense ? dense : clone_from_dense(dense);
  }();
  if (f.dense && !start.is_dense()) throw ConfigError("--dense needs a dense init checkpoint");
  const TrainConfig tc = train_config_from_json(train_j);
  c.config["model"] = to_json(start.config());
  c.config["train"] = to_json(tc);
  c.config["architecture"] = start.is_dense() ? "dense" : "ple";
  echo_config(c, "train");

  const auto on_epoch = [&](const EpochSummary& e, const ModelParams&) {
    out << "epoch " << e.epoch + 1 << " no_think_loss=" << fmt("%.6f", e.mean_loss[0])
        << " think_loss=" << fmt("%.6f", e.mean_loss[1]) << '\n';
    out.flush();
    return true;
  };
  const TrainResult r = train(std::move(start), data, tc, on_epoch);

  const fs::path ckpt = c.out / "model.ple";
  save_checkpoint(ckpt, r.params);
  vocab.save(vocab_path_for(ckpt));
  std::ofstream csv(c.out / "trajectory.csv", std::ios::binary);
  csv << "# seed=" << c.seed << '\n';
  r.log.write_csv(csv);
  out << "checkpoint " << ckpt.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateFlags {
  std::string checkpoint, vocab, prompt;
  std::size_t max_new = 32;
  bool greedy = false;
  std::optional<double> temperature;
  bool no_cache = false;
};

int cmd_generate(const GenerateFlags& f, Context c, bool write_artifacts) {
  const fs::path ckpt = path_setting(c, f.checkpoint, "checkpoint", true);
  const fs::path vocab_path = path_setting(c, f.vocab, "vocab", false);
  if (f.greedy && f.temperature) throw ArgumentError("--greedy and --temp are exclusive");
  const ModelParams params = load_checkpoint(ckpt);
  const Vocabulary vocab = checkpoint_vocab(ckpt, vocab_path);

  std::size_t unknown = 0;
  std::vector<TokenId> prompt{kBosId};
  for (TokenId t : encode(f.prompt, vocab, &unknown)) prompt.push_back(t);
  if (unknown) *c.err_stream << "warning: " << unknown << " prompt word(s) mapped to " << kUnkToken << '\n';

  SamplerConfig sampler;
  sampler.seed = c.seed;
  if (f.temperature) {
    sampler.greedy = false;
    sampler.temperature = *f.temperature;
  }
  GenerateOptions opts;
  opts.use_kv_cache = !f.no_cache;
  const GenerationResult r = generate(params, prompt, f.max_new, sampler, opts);
  const std::string text = decode(r.tokens, vocab);
  *c.out_stream << text << '\n' << "route=" << route_index(r.route) << '\n';
  if (write_artifacts) {
    c.config["prompt"] = f.prompt;
    c.config["max_new"] = f.max_new;
    c.config["sampler"] = {{"greedy", sampler.greedy}, {"temperature", sampler.temperature}};
    c.config["kv_cache"] = opts.use_kv_cache;
    echo_config(c, "generate");
    write_json(c.out / "generation.json", {{"seed", c.seed},
                                           {"completion", text},
                                           {"route", route_index(r.route)},
                                           {"hit_eos", r.hit_eos}});
  }
  return 0;
}

// ---------------------------------------------------------------- theory / gradcheck

struct TheoryFlags {
  std::vector<std::string> checks;
  std::optional<std::size_t> instances, dim, probes, model_seeds, gradient_seeds, coords;
  std::string checkpoint;
  std::string corrupt_op;  // test hook: scale this op's backward
};

int run_suite(theory::SuiteOptions o, const std::string& command, const std::string& fault_op,
              Context& c) {
  std::vector<theory::CheckRecord> records;
  {
    std::optional<ScopedBackwardFault> fault;
    if (!fault_op.empty()) fault.emplace(fault_op, 1.5);
    records = theory::run_checks(o);
  }
  std::ostringstream lines;
  for (const auto& r : records) {
    json j = r.to_json();
    j["seed"] = c.seed;
    lines << j.dump() << '\n';
  }
  write_text(c.out / (command + "_records.jsonl"), lines.str());
  theory::print_table(*c.out_stream, records);
  if (theory::all_passed(records)) {
    *c.out_stream << command << ": all " << records.size() << " checks passed\n";
    return 0;
  }
  std::map<std::string, std::size_t> failed;
  for (const auto& r : records) failed[r.check] += !r.pass;
  *c.err_stream << command << ": failed checks:";
  for (const auto& [name, n] : failed) {
    if (n) *c.err_stream << ' ' << name << " (" << n << ')';
  }
  *c.err_stream << '\n';
  return kCheckFailed;
}

std::optional<ModelParams> audit_model(Context& c, const std::string& flag) {
  const fs::path p = path_setting(c, flag, "checkpoint", false);
  if (p.empty()) return std::nullopt;
  ModelParams m = load_checkpoint(p);
  return m.is_dense() ? clone_from_dense(m) : m;
}

json suite_json(const theory::SuiteOptions& o) {
  return {{"checks", o.checks},           {"instances", o.instances},
          {"dim", o.dim},                 {"probes", o.probes},
          {"model_seeds", o.model_seeds}, {"gradient_seeds", o.gradient_seeds},
          {"max_fd_coords", o.max_fd_coords}};
}

void apply_suite_flags(theory::SuiteOptions& o, const TheoryFlags& f, const json& section) {
  auto pick = [&](std::size_t& field, const std::optional<std::size_t>& flag, const char* key) {
    if (flag) {
      field = *flag;
    } else if (section.contains(key)) {
      field = section[key].get<std::size_t>();
    }
  };
  pick(o.instances, f.instances, "instances");
  pick(o.dim, f.dim, "dim");
  pick(o.probes, f.probes, "probes");
  pick(o.model_seeds, f.model_seeds, "model_seeds");
  pick(o.gradient_seeds, f.gradient_seeds, "gradient_seeds");
  pick(o.max_fd_coords, f.coords, "max_fd_coords");
  if (!f.checks.empty()) {
    o.checks = f.checks;
  } else if (section.contains("checks")) {
    o.checks = section["checks"].get<std::vector<std::string>>();
  }
}

int cmd_theory(const TheoryFlags& f, Context c) {
  theory::SuiteOptions o;
  o.seed = c.seed;
  apply_suite_flags(o, f, c.config.value("theory", json::object()));
  if (o.probes == 0) throw ArgumentError("--probes must be at least 1");
  o.model = audit_model(c, f.checkpoint);
  c.config["theory"] = suite_json(o);
  if (!f.corrupt_op.empty()) c.config["corrupt_gradient"] = f.corrupt_op;
  echo_config(c, "theory");
  return run_suite(std::move(o), "theory", f.corrupt_op, c);
}

int cmd_gradcheck(const TheoryFlags& f, Context c) {
  theory::SuiteOptions o;
  o.seed = c.seed;
  o.model_seeds = 3;
  o.gradient_seeds = 3;
  apply_suite_flags(o, f, c.config.value("gradcheck", json::object()));
  if (o.probes == 0) throw ArgumentError("--probes must be at least 1");
  o.checks = {"gradient-oracle", "decoupling", "hessian-block", "hessian-control"};
  o.model = audit_model(c, f.checkpoint);
  c.config["gradcheck"] = suite_json(o);
  if (!f.corrupt_op.empty()) c.config["inject_fault"] = f.corrupt_op;
  echo_config(c, "gradcheck");
  return run_suite(std::move(o), "gradcheck", f.corrupt_op, c);
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
  std::string checkpoint, dataset, vocab, lexicon, baseline, mode = "both", stub;
  std::string name = "model", baseline_name = "baseline";
  std::optional<std::size_t> max_new;
  std::optional<double> temperature;
};

std::vector<Route> parse_modes(const std::string& m) {
  if (m == "both") return {Route::NoThink, Route::Think};
  if (m == "think") return {Route::Think};
  if (m == "no_think") return {Route::NoThink};
  throw ArgumentError("--mode must be both, think or no_think");
}

ReflectiveLexicon lexicon_at(const fs::path& p) {
  return p.empty() ? ReflectiveLexicon() : ReflectiveLexicon::load(p);
}

int cmd_eval(const EvalFlags& f, Context c) {
  const auto modes = parse_modes(f.mode);
  const fs::path dataset_path = path_setting(c, f.dataset, "dataset", true);
  const fs::path lexicon_path = path_setting(c, f.lexicon, "lexicon", false);
  const fs::path vocab_path = path_setting(c, f.vocab, "vocab", false);
  const bool stub = !f.stub.empty();
  if (stub && f.stub != "gold") throw ArgumentError("--stub supports only 'gold'");
  const fs::path ckpt = stub ? fs::path() : path_setting(c, f.checkpoint, "checkpoint", true);
  const fs::path baseline = path_setting(c, f.baseline, "baseline", false);
  if (stub && vocab_path.empty()) throw ArgumentError("--stub needs --vocab");

  const ReflectiveLexicon lexicon = lexicon_at(lexicon_path);
  const auto records = read_jsonl_dataset(dataset_path);
  DecodeSettings decode;
  decode.max_new = f.max_new.value_or(c.config.value("max_new", decode.max_new));
  decode.sampler.seed = c.seed;
  if (f.temperature) {
    decode.sampler.greedy = false;
    decode.sampler.temperature = *f.temperature;
  }
  c.config["mode"] = f.mode;
  c.config["max_new"] = decode.max_new;
  c.config["sampler"] = {{"greedy", decode.sampler.greedy}, {"temperature", decode.sampler.temperature}};
  c.config["lexicon_markers"] = lexicon.markers();
  if (stub) c.config["stub"] = f.stub;
  echo_config(c, "eval");

  std::vector<NamedReport> reports;
  auto run_model = [&](const std::string& name, const fs::path& path) {
    const ModelParams params = load_checkpoint(path);
    const Vocabulary vocab = checkpoint_vocab(path, vocab_path);
    for (Route m : modes) {
      const auto prompts = eval_prompts(records, vocab, m);
      reports.push_back({name, evaluate(params, prompts, m, vocab, decode, lexicon)});
    }
  };
  if (stub) {
    // Always answers with the gold label of the prompt it is given.
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    for (Route m : modes) {
      const auto prompts = eval_prompts(records, vocab, m);
      std::map<std::vector<TokenId>, std::string> gold;
      for (const auto& p : prompts) gold[p.prompt_ids] = p.gold;
      const Responder respond = [&](std::span<const TokenId> prompt) {
        return encode("answer: " + gold.at({prompt.begin(), prompt.end()}), vocab);
      };
      reports.push_back({"stub-" + f.stub, evaluate(respond, prompts, m, vocab, lexicon)});
    }
  } else {
    run_model(f.name, ckpt);
  }
  if (!baseline.empty()) run_model(f.baseline_name, baseline);

  json rj = json::array();
  for (const auto& r : reports) {
    json j = r.report.to_json();
    j["model"] = r.model;
    rj.push_back(j);
  }
  write_text(c.out / "eval_report.csv", reports_csv(reports));
  write_json(c.out / "eval_report.json", {{"seed", c.seed}, {"config", c.config}, {"reports", rj}});
  *c.out_stream << reports_csv(reports);
  if (!baseline.empty()) {
    const auto rows = leakage_delta_table(reports, f.baseline_name);
    write_text(c.out / "eval_delta.csv", delta_table_csv(rows));
    *c.out_stream << '\n' << delta_table_text(rows);
  }
  return 0;
}

// ---------------------------------------------------------------- filter

struct FilterFlags {
  std::string candidates, gold, lexicon;
  std::optional<std::size_t> max_len;
};

std::vector<Candidate> read_candidates(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open candidates " + path.string());
  std::vector<Candidate> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("prompt") || !j.contains("response") ||
        !j["prompt"].is_string() || !j["response"].is_string()) {
      throw DataError(where + "candidate needs string fields prompt and response");
    }
    out.push_back({j["prompt"].get<std::string>(), j["response"].get<std::string>(), {}});
  }
  return out;
}

std::vector<std::string> read_gold(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gold file " + path.string());
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto words = split_whitespace(line);
    if (words.empty()) continue;
    if (words.size() != 1) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": gold answer must be a single token");
    }
    out.push_back(words[0]);
  }
  return out;
}

int cmd_filter(const FilterFlags& f, Context c) {
  const fs::path cand_path = path_setting(c, f.candidates, "candidates", true);
  const fs::path gold_path = path_setting(c, f.gold, "gold", true);
  const fs::path lexicon_path = path_setting(c, f.lexicon, "lexicon", false);
  const std::size_t max_len = f.max_len.value_or(c.config.value("max_len", kDefaultNoThinkMaxLen));
  const ReflectiveLexicon lexicon = lexicon_at(lexicon_path);

  auto candidates = read_candidates(cand_path);
  const auto gold = read_gold(gold_path);
  if (gold.size() != candidates.size()) {
    throw DataError("gold file has " + std::to_string(gold.size()) + " answers for " +
                    std::to_string(candidates.size()) + " candidates");
  }
  for (std::size_t i = 0; i < gold.size(); ++i) candidates[i].gold = gold[i];
  c.config["max_len"] = max_len;
  c.config["lexicon_markers"] = lexicon.markers();
  echo_config(c, "filter");

  const FilterResult r = filter_no_think_candidates(candidates, max_len, lexicon);
  std::vector<TextExample> kept;
  for (std::size_t i : r.kept) {
    kept.push_back({candidates[i].prompt, candidates[i].response, Route::NoThink, candidates[i].gold, 0});
  }
  write_jsonl_dataset(c.out / "kept.jsonl", kept);
  std::ostringstream audit;
  for (const auto& v : r.audit) audit << v.to_json().dump() << '\n';
  write_text(c.out / "filter_audit.jsonl", audit.str());

  std::map<std::string, std::size_t> reasons;
  for (const auto& v : r.audit) {
    if (v.reason) ++reasons[std::string(filter_reason_name(*v.reason))];
  }
  *c.out_stream << "kept " << r.kept.size() << " of " << candidates.size();
  for (const auto& [k, n] : reasons) *c.out_stream << ' ' << k << '=' << n;
  *c.out_stream << '\n';
  return 0;
}

// ---------------------------------------------------------------- synth / demo

struct SynthFlags {
  std::optional<std::size_t> problems, held_out, filler_words, think_repeats;
};

SynthTaskSpec synth_spec(const SynthFlags& f, Context& c) {
  json j = c.config.value("task", json::object());
  auto set = [&](const char* key, const std::optional<std::size_t>& v) {
    if (v) j[key] = *v;
  };
  set("problems", f.problems);
  set("held_out", f.held_out);
  set("filler_words", f.filler_words);
  set("think_repeats", f.think_repeats);
  j["seed"] = c.seed;
  SynthTaskSpec s = synth_spec_from_json(j);
  c.config["task"] = to_json(s);
  return s;
}

int cmd_synth(const SynthFlags& f, Context c) {
  const SynthTask task = generate_synth_task(synth_spec(f, c));
  echo_config(c, "synth");
  write_jsonl_dataset(c.out / "train.jsonl", task.train);
  write_jsonl_dataset(c.out / "held_out.jsonl", task.held_out);
  task.vocab.save(c.out / "vocab.txt");
  *c.out_stream << "wrote " << task.train.size() << " training and " << task.held_out.size()
                << " held-out records to " << c.out.string() << '\n';
  return 0;
}

struct DemoFlags {
  SynthFlags task;
  std::optional<std::size_t> max_epochs;
  bool no_dense = false;
};

int cmd_demo(const DemoFlags& f, Context c) {
  DemoConfig d = default_demo_config(c.seed);
  d.task = synth_spec(f.task, c);
  if (f.max_epochs) d.max_epochs = *f.max_epochs;
  d.train_dense_baseline = !f.no_dense;
  c.config["model"] = to_json(d.model);
  c.config["train"] = to_json(d.train);
  c.config["max_epochs"] = d.max_epochs;
  c.config["think_accuracy_target"] = d.think_accuracy_target;
  c.config["max_new"] = d.decode.max_new;
  echo_config(c, "demo");

  const DemoResult r = run_synthetic_demo(d, [&](const std::string& s) {
    *c.out_stream << s << '\n';
    c.out_stream->flush();
  });
  std::vector<NamedReport> reports{r.ple_no_think, r.ple_think};
  if (r.dense_think) {
    reports.push_back(*r.dense_no_think);
    reports.push_back(*r.dense_think);
  }
  json rj = json::array();
  for (const auto& n : reports) {
    json j = n.report.to_json();
    j["model"] = n.model;
    rj.push_back(j);
  }
  write_text(c.out / "demo_report.csv", reports_csv(reports));
  write_json(c.out / "demo_report.json", {{"seed", c.seed},
                                          {"epochs", r.epochs},
                                          {"train_seconds", r.train_seconds},
                                          {"dense_seconds", r.dense_seconds},
                                          {"reports", rj}});
  *c.out_stream << reports_csv(reports);
  if (r.dense_think) *c.out_stream << '\n' << delta_table_text(leakage_delta_table(reports, "dense"));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Path-locked expert decoder: training, generation, audits and leakage evaluation",
               "ple"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config; flags override its fields");
  g.seed_opt = app.add_option("--seed", g.seed, "Random seed (required here or in the config)");
  g.out_opt = app.add_option("--out", g.out, "Output directory (default ple-out)");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint + trajectory");
  train_cmd->add_option("--dataset", tf.dataset, "JSONL training records");
  train_cmd->add_option("--vocab", tf.vocab, "Vocabulary file (default: built from the dataset)");
  train_cmd->add_option("--init", tf.init, "Start from this checkpoint (dense ones are cloned)");
  train_cmd->add_flag("--dense", tf.dense, "Train a dense single-MLP model instead");
  train_cmd->add_option("--epochs", tf.epochs);
  train_cmd->add_option("--batch-size", tf.batch_size);
  train_cmd->add_option("--lr", tf.lr);
  train_cmd->add_option("--momentum", tf.momentum);
  train_cmd->add_option("--optimizer", tf.optimizer, "sgd or sgd_momentum");
  train_cmd->add_option("--reduction", tf.reduction, "example_mean or token_sum");
  train_cmd->add_option("--clip-norm", tf.clip_norm, "Gradient clipping (breaks exact identities)");
  train_cmd->add_flag("--freeze-shared", tf.freeze_shared, "Update expert segments only");
  train_cmd->add_flag("--no-shuffle", tf.no_shuffle);
  train_cmd->add_option("--d-model", tf.d_model);
  train_cmd->add_option("--layers", tf.n_layers);
  train_cmd->add_option("--heads", tf.n_heads);
  train_cmd->add_option("--d-ff", tf.d_ff);
  train_cmd->add_option("--max-seq", tf.max_seq);

  GenerateFlags gf;
  auto* gen_cmd = app.add_subcommand("generate", "Decode a completion and print the route used");
  gen_cmd->add_option("prompt", gf.prompt, "Prompt text")->required();
  gen_cmd->add_option("--checkpoint", gf.checkpoint);
  gen_cmd->add_option("--vocab", gf.vocab, "Vocabulary file (default <checkpoint>.vocab)");
  gen_cmd->add_option("--max-new", gf.max_new, "Maximum generated tokens");
  gen_cmd->add_flag("--greedy", gf.greedy, "Greedy decoding (default)");
  gen_cmd->add_option("--temp", gf.temperature, "Sample at this temperature");
  gen_cmd->add_flag("--no-cache", gf.no_cache, "Recompute the full prefix at every step");

  TheoryFlags thf;
  auto* theory_cmd = app.add_subcommand("theory", "Run the theory and model property checks");
  theory_cmd->add_option("--checks", thf.checks, "Comma-separated check names")->delimiter(',');
  theory_cmd->add_option("--instances", thf.instances, "Quadratic instances per check");
  theory_cmd->add_option("--dim", thf.dim, "Quadratic dimension");
  theory_cmd->add_option("--probes", thf.probes, "Hessian probe pairs per block");
  theory_cmd->add_option("--model-seeds", thf.model_seeds);
  theory_cmd->add_option("--gradient-seeds", thf.gradient_seeds);
  theory_cmd->add_option("--checkpoint", thf.checkpoint, "Audit this model in the gradient checks");
  theory_cmd->add_option("--coords", thf.coords, "Finite-difference coordinates on a checkpoint");
  theory_cmd->add_option("--corrupt-gradient", thf.corrupt_op, "Test hook: scale this op's backward")
      ->expected(0, 1)
      ->default_str("silu");

  TheoryFlags gcf;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Gradient, decoupling and Hessian audits");
  grad_cmd->add_option("--checkpoint", gcf.checkpoint, "Model to audit (default: fresh tiny model)");
  grad_cmd->add_option("--probes", gcf.probes, "Hessian probe pairs per block");
  grad_cmd->add_option("--seeds", gcf.model_seeds, "Audit seeds");
  grad_cmd->add_option("--coords", gcf.coords, "Finite-difference coordinates on a checkpoint");
  grad_cmd->add_option("--inject-fault", gcf.corrupt_op, "Test hook: scale this op's backward")
      ->expected(0, 1)
      ->default_str("silu");

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy, length and reflective-marker reports");
  eval_cmd->add_option("--checkpoint", ef.checkpoint);
  eval_cmd->add_option("--dataset", ef.dataset, "JSONL evaluation records with answers");
  eval_cmd->add_option("--mode", ef.mode, "both, think or no_think");
  eval_cmd->add_option("--vocab", ef.vocab);
  eval_cmd->add_option("--lexicon", ef.lexicon, "Reflective markers, one per line");
  eval_cmd->add_option("--baseline", ef.baseline, "Baseline checkpoint for the delta table");
  eval_cmd->add_option("--name", ef.name, "Model label in reports");
  eval_cmd->add_option("--baseline-name", ef.baseline_name);
  eval_cmd->add_option("--max-new", ef.max_new);
  eval_cmd->add_option("--temp", ef.temperature);
  eval_cmd->add_option("--stub", ef.stub, "Test hook: 'gold' answers every prompt correctly");

  FilterFlags ff;
  auto* filter_cmd = app.add_subcommand("filter", "Filter no-think candidates");
  filter_cmd->add_option("--candidates", ff.candidates, "JSONL {prompt, response} records");
  filter_cmd->add_option("--gold", ff.gold, "One gold answer per line, aligned with candidates");
  filter_cmd->add_option("--max-len", ff.max_len, "Maximum response length in tokens");
  filter_cmd->add_option("--lexicon", ff.lexicon, "Reflective markers, one per line");

  SynthFlags sf;
  auto add_task_flags = [](CLI::App* cmd, SynthFlags& s) {
    cmd->add_option("--problems", s.problems);
    cmd->add_option("--held-out", s.held_out);
    cmd->add_option("--filler-words", s.filler_words);
    cmd->add_option("--think-repeats", s.think_repeats);
  };
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic modular-arithmetic task");
  add_task_flags(synth_cmd, sf);

  DemoFlags df;
  auto* demo_cmd = app.add_subcommand("demo", "Train and evaluate on the synthetic task");
  add_task_flags(demo_cmd, df.task);
  demo_cmd->add_option("--max-epochs", df.max_epochs);
  demo_cmd->add_flag("--no-dense", df.no_dense, "Skip the dense baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    auto ctx = [&](const std::string& name, bool needs_out) {
      Context c = resolve(g, name, needs_out);
      c.out_stream = &out;
      c.err_stream = &err;
      return c;
    };
    if (*train_cmd) return cmd_train(g, tf, ctx("train", true));
    if (*gen_cmd) return cmd_generate(gf, ctx("generate", g.out_opt->count() > 0), g.out_opt->count() > 0);
    if (*theory_cmd) {
      if (theory_cmd->get_option("--corrupt-gradient")->count() && thf.corrupt_op.empty()) thf.corrupt_op = "silu";
      return cmd_theory(thf, ctx("theory", true));
    }
    if (*grad_cmd) {
      if (grad_cmd->get_option("--inject-fault")->count() && gcf.corrupt_op.empty()) gcf.corrupt_op = "silu";
      return cmd_gradcheck(gcf, ctx("gradcheck", true));
    }
    if (*eval_cmd) return cmd_eval(ef, ctx("eval", true));
    if (*filter_cmd) return cmd_filter(ff, ctx("filter", true));
    if (*synth_cmd) return cmd_synth(sf, ctx("synth", true));
    if (*demo_cmd) return cmd_demo(df, ctx("demo", true));
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: bad config value: " << e.what() << '\n';
    return kUsageError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace ple
