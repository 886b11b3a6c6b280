#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ple/error.hpp"
#include "ple/tokenizer.hpp"

using namespace ple;

TEST_SUITE("tokenizer") {

TEST_CASE("reserved ids come first") {
  const Vocabulary v({"a", "b", "/think", "a"});
  CHECK(v.size() == kNumReserved + 2);
  CHECK(v.id(kPadToken) == kPadId);
  CHECK(v.id(kBosToken) == kBosId);
  CHECK(v.id(kEosToken) == kEosId);
  CHECK(v.id(kThinkToken) == kThinkId);
  CHECK(v.id(kNoThinkToken) == kNoThinkId);
  CHECK(v.id(kUnkToken) == kUnkId);
  CHECK(v.id("a") == 6);
  CHECK(v.id("b") == 7);
  CHECK(v.id("zzz") == kUnkId);
  CHECK_THROWS_AS(v.token(99), IndexError);
}

TEST_CASE("encode and decode") {
  const Vocabulary v({"a", "b"});
  CHECK(encode("a b /think", v) == std::vector<TokenId>{6, 7, kThinkId});
  CHECK(encode("", v).empty());
  CHECK(decode(std::vector<TokenId>{}, v).empty());
  CHECK(decode(std::vector<TokenId>{kNoThinkId}, v) == "/no_think");
  std::size_t unknown = 0;
  CHECK(encode("a  c\tb d", v, &unknown) == std::vector<TokenId>{6, kUnkId, 7, kUnkId});
  CHECK(unknown == 2);
}

TEST_CASE("round trip on a generated corpus") {
  std::mt19937_64 rng(11);
  std::vector<std::string> words;
  for (int i = 0; i < 40; ++i) words.push_back("w" + std::to_string(i));
  const Vocabulary v(words);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const std::size_t n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) text += (rng() % 3 == 0) ? "   " : " ";
      text += words[rng() % words.size()];
    }
    std::string normalized;
    for (const auto& w : split_whitespace(text)) normalized += (normalized.empty() ? "" : " ") + w;
    CHECK(decode(encode(text, v), v) == normalized);
  }
}

TEST_CASE("route resolution") {
  const TokenId w = 7;
  CHECK(resolve_route(std::vector<TokenId>{w, w, kThinkId}) == Route::Think);
  CHECK(resolve_route(std::vector<TokenId>{w, w}) == Route::NoThink);
  CHECK(resolve_route(std::vector<TokenId>{kThinkId, w, kNoThinkId, w}) == Route::NoThink);
  CHECK(resolve_route(std::vector<TokenId>{kNoThinkId, w, kThinkId, w}) == Route::Think);
  CHECK(resolve_route(std::vector<TokenId>{}) == Route::NoThink);
}

TEST_CASE("vocabulary file round trip") {
  const auto dir = test::scratch_dir("vocab");
  const Vocabulary v({"x", "y", "answer:"});
  v.save(dir / "v.txt");
  const Vocabulary back = Vocabulary::load(dir / "v.txt");
  CHECK(back.tokens() == v.tokens());
  std::ifstream in(dir / "v.txt");
  std::string first;
  std::getline(in, first);
  CHECK(first == kPadToken);

  std::ofstream bad(dir / "bad.txt");
  bad << "<bos>\n<pad>\n";
  bad.close();
  CHECK_THROWS_AS(Vocabulary::load(dir / "bad.txt"), FormatError);
}

}  // TEST_SUITE
