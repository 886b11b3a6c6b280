#include <fstream>

#include "ple/error.hpp"
#include "ple/trainer.hpp"

namespace ple {

LmBatchRow lm_row(const ChatExample& ex) {
  if (ex.prompt_ids.empty() || ex.target_ids.empty()) {
    throw DataError("an example needs a non-empty prompt and target");
  }
  LmBatchRow row;
  row.inputs = ex.prompt_ids;
  row.inputs.insert(row.inputs.end(), ex.target_ids.begin(), ex.target_ids.end() - 1);
  const std::size_t T = row.inputs.size();
  row.targets.resize(T);
  row.mask.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t next = t + 1;
    row.targets[t] = next < ex.prompt_ids.size() ? ex.prompt_ids[next]
                                                 : ex.target_ids[next - ex.prompt_ids.size()];
    row.mask[t] = next >= ex.prompt_ids.size();
  }
  return row;
}

std::vector<TextExample> read_jsonl_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<TextExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("prompt") || !j.contains("target") || !j.contains("mode") ||
        !j["prompt"].is_string() || !j["target"].is_string() || !j["mode"].is_string()) {
      throw DataError(where + "record needs string fields prompt, target and mode");
    }
    TextExample rec;
    rec.prompt = j["prompt"].get<std::string>();
    rec.target = j["target"].get<std::string>();
    const auto mode = j["mode"].get<std::string>();
    if (mode == "think") {
      rec.mode = Route::Think;
    } else if (mode == "no_think") {
      rec.mode = Route::NoThink;
    } else {
      throw DataError(where + "mode must be \"think\" or \"no_think\", got \"" + mode + "\"");
    }
    if (j.contains("answer") && !j["answer"].is_null()) {
      if (!j["answer"].is_string()) throw DataError(where + "answer must be a string");
      rec.answer = j["answer"].get<std::string>();
    }
    rec.line = lineno;
    out.push_back(std::move(rec));
  }
  return out;
}

void write_jsonl_dataset(const std::filesystem::path& path, std::span<const TextExample> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& r : records) {
    nlohmann::json j = {{"prompt", r.prompt}, {"target", r.target}, {"mode", route_name(r.mode)}};
    if (r.answer) j["answer"] = *r.answer;
    out << j.dump() << '\n';
  }
}

Vocabulary vocabulary_for(std::span<const TextExample> records) {
  std::vector<std::string> words;
  for (const auto& r : records) {
    for (auto& w : split_whitespace(r.prompt)) words.push_back(std::move(w));
    for (auto& w : split_whitespace(r.target)) words.push_back(std::move(w));
  }
  return Vocabulary(words);
}

ChatExample encode_example(const TextExample& rec, const Vocabulary& vocab, std::size_t index) {
  const std::string where = rec.line ? "line " + std::to_string(rec.line)
                                     : "example " + std::to_string(index);
  ChatExample ex;
  ex.mode = rec.mode;
  ex.answer = rec.answer;
  ex.prompt_ids.push_back(kBosId);
  for (TokenId t : encode(rec.prompt, vocab)) ex.prompt_ids.push_back(t);
  const bool has_control =
      std::any_of(ex.prompt_ids.begin(), ex.prompt_ids.end(), is_control_token);
  if (has_control && resolve_route(ex.prompt_ids) != rec.mode) {
    throw DataError(where + ": prompt routes to " + std::string(route_name(resolve_route(ex.prompt_ids))) +
                    " but the example is tagged " + std::string(route_name(rec.mode)));
  }
  if (!is_control_token(ex.prompt_ids.back())) ex.prompt_ids.push_back(control_token_for(rec.mode));
  ex.target_ids = encode(rec.target, vocab);
  ex.target_ids.push_back(kEosId);
  return ex;
}

std::vector<ChatExample> encode_dataset(std::span<const TextExample> records,
                                        const Vocabulary& vocab) {
  std::vector<ChatExample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(encode_example(records[i], vocab, i));
  return out;
}

void check_route_consistency(std::span<const ChatExample> examples) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (resolve_route(examples[i].prompt_ids) != examples[i].mode) {
      throw DataError("example " + std::to_string(i) + ": prompt routes to " +
                      std::string(route_name(resolve_route(examples[i].prompt_ids))) +
                      " but the example is tagged " + std::string(route_name(examples[i].mode)));
    }
  }
}

std::string_view reduction_name(LossReduction r) {
  return r == LossReduction::kTokenSum ? "token_sum" : "example_mean";
}

LossReduction parse_reduction(std::string_view name) {
  if (name == "example_mean") return LossReduction::kExampleMean;
  if (name == "token_sum") return LossReduction::kTokenSum;
  throw ConfigError("reduction must be example_mean or token_sum, got '" + std::string(name) + "'");
}

}  // namespace ple
