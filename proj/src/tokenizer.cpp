#include "ple/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "ple/error.hpp"

namespace ple {

std::string_view route_name(Route r) { return r == Route::Think ? "think" : "no_think"; }

std::optional<Route> parse_route(std::string_view name) {
  if (name == "think" || name == "1") return Route::Think;
  if (name == "no_think" || name == "0") return Route::NoThink;
  return std::nullopt;
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (auto t : {kPadToken, kBosToken, kEosToken, kThinkToken, kNoThinkToken, kUnkToken}) {
    index_.emplace(std::string(t), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(t);
  }
  for (const auto& w : words) {
    if (w.empty() || index_.contains(w)) continue;
    if (w.find_first_of(" \t\r\n") != std::string::npos) {
      throw ArgumentError("vocabulary token contains whitespace: '" + w + "'");
    }
    index_.emplace(w, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(w);
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  const std::vector<std::string_view> reserved = {kPadToken,    kBosToken,     kEosToken,
                                                  kThinkToken,  kNoThinkToken, kUnkToken};
  if (lines.size() < reserved.size()) {
    throw FormatError("vocabulary file " + path.string() + " is missing reserved tokens");
  }
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    if (lines[i] != reserved[i]) {
      throw FormatError("vocabulary line " + std::to_string(i + 1) + " must be '" +
                        std::string(reserved[i]) + "', found '" + lines[i] + "'");
    }
  }
  std::vector<std::string> words(lines.begin() + static_cast<std::ptrdiff_t>(reserved.size()),
                                 lines.end());
  Vocabulary v(words);
  if (v.size() != lines.size()) {
    throw FormatError("vocabulary file " + path.string() + " has duplicate or empty tokens");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab,
                            std::size_t* unknown_count) {
  std::vector<TokenId> ids;
  std::size_t unknown = 0;
  for (const auto& w : split_whitespace(text)) {
    const TokenId id = vocab.id(w);
    if (id == kUnkId && w != kUnkToken) ++unknown;
    ids.push_back(id);
  }
  if (unknown_count) *unknown_count = unknown;
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i != 0) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

Route resolve_route(std::span<const TokenId> prompt_ids, Route fallback) {
  for (auto it = prompt_ids.rbegin(); it != prompt_ids.rend(); ++it) {
    if (*it == kThinkId) return Route::Think;
    if (*it == kNoThinkId) return Route::NoThink;
  }
  return fallback;
}

}  // namespace ple
