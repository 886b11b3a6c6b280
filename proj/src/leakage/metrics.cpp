#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ple/error.hpp"
#include "ple/leakage.hpp"

namespace ple {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ReflectiveLexicon::ReflectiveLexicon() : ReflectiveLexicon({"wait", "hmm", "alternatively"}) {}

ReflectiveLexicon::ReflectiveLexicon(std::vector<std::string> markers) {
  for (auto& m : markers) {
    if (m.empty() || m.find_first_of(" \t\r\n") != std::string::npos) {
      throw ArgumentError("reflective marker must be a single non-empty token: '" + m + "'");
    }
    markers_.push_back(lower(m));
  }
  if (markers_.empty()) throw ArgumentError("reflective lexicon is empty");
}

ReflectiveLexicon ReflectiveLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open lexicon " + path.string());
  std::vector<std::string> markers;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    markers.push_back(t);
  }
  return ReflectiveLexicon(std::move(markers));
}

bool ReflectiveLexicon::matches(std::string_view token) const {
  const std::string t = lower(token);
  return std::find(markers_.begin(), markers_.end(), t) != markers_.end();
}

std::size_t count_reflective(std::string_view text, const ReflectiveLexicon& lexicon) {
  std::size_t n = 0;
  for (const auto& w : split_whitespace(text)) n += lexicon.matches(w);
  return n;
}

std::optional<std::string> extract_answer(std::string_view text) {
  const auto words = split_whitespace(text);
  for (std::size_t i = words.size(); i > 0; --i) {
    if (words[i - 1] == "answer:") {
      if (i < words.size()) return words[i];
      return std::nullopt;
    }
  }
  return std::nullopt;
}

nlohmann::json LeakageReport::to_json() const {
  return {{"mode", route_name(mode)},     {"accuracy", accuracy}, {"mean_length", mean_length},
          {"refl_per_answer", refl_per_answer}, {"scored", scored}, {"skipped", skipped}};
}

std::vector<TokenId> with_control(std::span<const TokenId> prompt, Route mode) {
  std::vector<TokenId> out(prompt.begin(), prompt.end());
  while (!out.empty() && is_control_token(out.back())) out.pop_back();
  out.push_back(control_token_for(mode));
  return out;
}

LeakageReport evaluate(const Responder& respond, std::span<const EvalPrompt> prompts, Route mode,
                       const Vocabulary& vocab, const ReflectiveLexicon& lexicon) {
  LeakageReport r;
  r.mode = mode;
  std::size_t correct = 0, length = 0, refl = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (resolve_route(prompts[i].prompt_ids) != mode) {
      throw ArgumentError("evaluation prompt " + std::to_string(i) + " does not route to " +
                          std::string(route_name(mode)));
    }
    std::vector<TokenId> out;
    try {
      out = respond(prompts[i].prompt_ids);
    } catch (const CapacityError&) {
      ++r.skipped;
      continue;
    }
    const std::string text = decode(out, vocab);
    const auto answer = extract_answer(text);
    correct += answer && trim(*answer) == trim(prompts[i].gold);
    length += out.size();
    refl += count_reflective(text, lexicon);
    ++r.scored;
  }
  if (r.scored) {
    const double n = static_cast<double>(r.scored);
    r.accuracy = static_cast<double>(correct) / n;
    r.mean_length = static_cast<double>(length) / n;
    r.refl_per_answer = static_cast<double>(refl) / n;
  }
  return r;
}

LeakageReport evaluate(const ModelParams& params, std::span<const EvalPrompt> prompts, Route mode,
                       const Vocabulary& vocab, const DecodeSettings& decode,
                       const ReflectiveLexicon& lexicon) {
  const Responder respond = [&](std::span<const TokenId> prompt) {
    return generate(params, prompt, decode.max_new, decode.sampler).tokens;
  };
  return evaluate(respond, prompts, mode, vocab, lexicon);
}

std::vector<EvalPrompt> eval_prompts(std::span<const TextExample> records, const Vocabulary& vocab,
                                     Route mode) {
  std::vector<EvalPrompt> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    TextExample rec = records[i];
    auto gold = rec.answer ? rec.answer : extract_answer(rec.target);
    if (!gold) continue;  // nothing to score against
    // Re-tag so the loader accepts the record for either route.
    std::vector<TokenId> ids{kBosId};
    for (TokenId t : encode(rec.prompt, vocab)) ids.push_back(t);
    out.push_back({with_control(ids, mode), *gold});
  }
  return out;
}

std::string_view filter_reason_name(FilterReason r) {
  switch (r) {
    case FilterReason::kCorrectness: return "correctness";
    case FilterReason::kLength: return "length";
    case FilterReason::kStyle: return "style";
  }
  return "correctness";
}

nlohmann::json FilterVerdict::to_json() const {
  nlohmann::json j = {{"index", index}, {"verdict", kept ? "kept" : "rejected"}};
  j["reason"] = reason ? nlohmann::json(filter_reason_name(*reason)) : nlohmann::json(nullptr);
  return j;
}

FilterResult filter_no_think_candidates(std::span<const Candidate> candidates, std::size_t max_len,
                                        const ReflectiveLexicon& lexicon) {
  if (max_len < 1) throw ArgumentError("max_len must be at least 1");
  FilterResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& c = candidates[i];
    FilterVerdict v;
    v.index = i;
    const auto answer = extract_answer(c.response);
    if (!answer || trim(*answer) != trim(c.gold)) {
      v.reason = FilterReason::kCorrectness;
    } else if (split_whitespace(c.response).size() > max_len) {
      v.reason = FilterReason::kLength;
    } else if (count_reflective(c.response, lexicon) > 0) {
      v.reason = FilterReason::kStyle;
    }
    v.kept = !v.reason;
    if (v.kept) out.kept.push_back(i);
    out.audit.push_back(v);
  }
  return out;
}

std::vector<DeltaRow> leakage_delta_table(std::span<const NamedReport> reports,
                                          std::string_view baseline) {
  auto find_base = [&](Route mode) -> const LeakageReport* {
    for (const auto& r : reports) {
      if (r.model == baseline && r.report.mode == mode) return &r.report;
    }
    return nullptr;
  };
  const bool any = std::any_of(reports.begin(), reports.end(),
                               [&](const NamedReport& r) { return r.model == baseline; });
  if (!any) throw ArgumentError("baseline '" + std::string(baseline) + "' has no report");
  std::vector<DeltaRow> rows;
  for (const auto& r : reports) {
    const LeakageReport* base = find_base(r.report.mode);
    if (!base) {
      throw ArgumentError("baseline '" + std::string(baseline) + "' has no " +
                          std::string(route_name(r.report.mode)) + " report");
    }
    DeltaRow row;
    row.model = r.model;
    row.mode = r.report.mode;
    row.accuracy = r.report.accuracy;
    row.mean_length = r.report.mean_length;
    row.refl_per_answer = r.report.refl_per_answer;
    row.d_accuracy = r.report.accuracy - base->accuracy;
    row.d_mean_length = r.report.mean_length - base->mean_length;
    row.d_refl_per_answer = r.report.refl_per_answer - base->refl_per_answer;
    rows.push_back(row);
  }
  return rows;
}

std::string delta_table_csv(std::span<const DeltaRow> rows) {
  std::ostringstream out;
  out.precision(10);
  out << "model,mode,accuracy,mean_length,refl_per_answer,d_accuracy,d_mean_length,d_refl_per_answer\n";
  for (const auto& r : rows) {
    out << r.model << ',' << route_name(r.mode) << ',' << r.accuracy << ',' << r.mean_length << ','
        << r.refl_per_answer << ',' << r.d_accuracy << ',' << r.d_mean_length << ','
        << r.d_refl_per_answer << '\n';
  }
  return out.str();
}

std::string delta_table_text(std::span<const DeltaRow> rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %-8s %8s %8s %10s %10s %8s %8s\n", static_cast<int>(w),
                "model", "mode", "acc", "d_acc", "len", "d_len", "refl", "d_refl");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %-8s %8.4f %+8.4f %10.2f %+10.2f %8.2f %+8.2f\n",
                  static_cast<int>(w), r.model.c_str(), std::string(route_name(r.mode)).c_str(),
                  r.accuracy, r.d_accuracy, r.mean_length, r.d_mean_length, r.refl_per_answer,
                  r.d_refl_per_answer);
    out += buf;
  }
  return out;
}

std::string reports_csv(std::span<const NamedReport> reports) {
  std::ostringstream out;
  out.precision(10);
  out << "model,mode,accuracy,mean_length,refl_per_answer\n";
  for (const auto& r : reports) {
    out << r.model << ',' << route_name(r.report.mode) << ',' << r.report.accuracy << ','
        << r.report.mean_length << ',' << r.report.refl_per_answer << '\n';
  }
  return out.str();
}

}  // namespace ple
