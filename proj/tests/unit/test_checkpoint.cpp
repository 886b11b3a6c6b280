#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ple/checkpoint.hpp"
#include "ple/tokenizer.hpp"
#include "ple/error.hpp"

using namespace ple;

namespace {

ModelParams trained_looking_model(std::uint64_t seed) {
  PleConfig c;
  c.vocab_size = 18;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 10;
  c.max_seq = 16;
  ModelParams m = clone_from_dense(ModelParams::random_dense(c, seed));
  auto e = m.expert(1, 1);
  e.w_down[0] = -0.0;  // sign of zero must survive
  e.w_up[1] = 1e-310;  // so must subnormals
  m.set_expert(1, 1, e);
  return m;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save, load, save is byte identical") {
  const auto dir = test::scratch_dir("ckpt");
  const ModelParams m = trained_looking_model(3);
  save_checkpoint(dir / "a.ple", m);
  const ModelParams back = load_checkpoint(dir / "a.ple");
  save_checkpoint(dir / "b.ple", back);
  CHECK(read_all(dir / "a.ple") == read_all(dir / "b.ple"));
  CHECK(back == m);
  const std::vector<TokenId> tokens{kBosId, 7, 9, 12, kThinkId, 8};
  CHECK(forward(back, tokens, Route::Think) == forward(m, tokens, Route::Think));
  CHECK(forward(back, tokens, Route::NoThink) == forward(m, tokens, Route::NoThink));
  CHECK(vocab_path_for(dir / "a.ple") == dir / "a.ple.vocab");
}

TEST_CASE("header layout") {
  const auto bytes = serialize_checkpoint(trained_looking_model(4));
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PLE1");
  CHECK(bytes[4] == kCheckpointVersion);
  const std::uint32_t cfg_len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
  const auto cfg = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + cfg_len);
  CHECK(cfg["d_model"] == 8);
}

TEST_CASE("dense checkpoints keep their labels") {
  PleConfig c;
  c.vocab_size = 12;
  c.d_model = 4;
  c.n_heads = 1;
  c.d_ff = 4;
  const ModelParams dense = ModelParams::random_dense(c, 1);
  const ModelParams back = deserialize_checkpoint(serialize_checkpoint(dense));
  CHECK(back.is_dense());
  CHECK(back == dense);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto good = serialize_checkpoint(trained_looking_model(5));
  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ple"), FormatError);
}

}  // TEST_SUITE
