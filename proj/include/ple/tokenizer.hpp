#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ple/types.hpp"

namespace ple {

// Reserved ids. The first five occupy lines 1-5 of a vocabulary file in this
// order; UNK always follows them.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kThinkId = 3;
inline constexpr TokenId kNoThinkId = 4;
inline constexpr TokenId kUnkId = 5;
inline constexpr std::size_t kNumReserved = 6;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kThinkToken = "/think";
inline constexpr std::string_view kNoThinkToken = "/no_think";
inline constexpr std::string_view kUnkToken = "<unk>";

inline constexpr bool is_control_token(TokenId id) { return id == kThinkId || id == kNoThinkId; }
inline constexpr TokenId control_token_for(Route r) {
  return r == Route::Think ? kThinkId : kNoThinkId;
}

/// Closed word-level vocabulary. Immutable after construction.
class Vocabulary {
 public:
  // Reserved tokens followed by `words` in order; duplicates and words that
  // collide with reserved tokens are skipped.
  explicit Vocabulary(const std::vector<std::string>& words = {});

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  TokenId id(std::string_view token) const;  // kUnkId if absent
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);

// Whitespace-split lookup. Unknown words map to kUnkId; `unknown_count`
// (optional) receives how many did.
std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab,
                            std::size_t* unknown_count = nullptr);
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

// Last control token wins; `fallback` when none is present.
Route resolve_route(std::span<const TokenId> prompt_ids, Route fallback = Route::NoThink);

}  // namespace ple
