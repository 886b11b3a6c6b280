#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "ple/error.hpp"
#include "ple/numeric/kernels.hpp"
#include "ple/numeric/ops.hpp"
#include "ple/numeric/tape.hpp"

using namespace ple;
using test::central_diff;
using test::max_rel;
using test::random_tensor;

namespace {

// sigmoid(1)
constexpr double kSiluOne = 0.7310585786300049;

Tensor eval(Tape& tape, Var v) { return tape.value(v); }

}  // namespace

TEST_SUITE("numeric") {

TEST_CASE("tensor shape and element count agree") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  Tensor bad = Tensor::vector({1.0, NAN});
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("matmul identity and zero") {
  Tape tape;
  auto id = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  auto b = tape.constant(Tensor::matrix({{3, 4}, {5, 6}}));
  CHECK(eval(tape, ops::matmul(id, b)) == Tensor::matrix({{3, 4}, {5, 6}}));
  auto r = tape.constant(Tensor::matrix({{1, 2}}));
  auto z = tape.constant(Tensor::matrix({{0}, {0}}));
  CHECK(eval(tape, ops::matmul(r, z)) == Tensor::matrix({{0}}));
  CHECK_THROWS_AS(ops::matmul(b, r), DimensionError);
}

TEST_CASE("matmul gradient matches central differences") {
  std::mt19937_64 rng(1);
  ParamVector p;
  p.add("a", random_tensor({4, 3}, rng));
  p.add("b", random_tensor({3, 2}, rng));
  const Tensor w = random_tensor({4, 2}, rng);
  LossFn fn = [&](Tape& t, ParamBinding& bind) {
    return ops::sum(ops::mul(ops::matmul(bind("a"), bind("b")), t.constant(w)));
  };
  const auto vg = value_and_grad(fn, p);
  CHECK(max_rel(vg.grad, central_diff(fn, p, 1e-5)) <= 1e-6);
}

TEST_CASE("silu values and gradient") {
  CHECK(kernels::silu(0.0) == 0.0);
  CHECK(kernels::silu(1.0) == doctest::Approx(kSiluOne).epsilon(1e-15));
  CHECK(kernels::silu(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));

  std::mt19937_64 rng(2);
  ParamVector p;
  p.add("x", random_tensor({3, 5}, rng, 2.0));
  LossFn fn = [](Tape&, ParamBinding& bind) { return ops::sum(ops::silu(bind("x"))); };
  CHECK(max_rel(value_and_grad(fn, p).grad, central_diff(fn, p, 1e-5)) <= 1e-6);
}

TEST_CASE("rms_norm edge cases") {
  Tape tape;
  auto gain = tape.constant(Tensor::filled({4}, 1.0));
  const Tensor pos = eval(tape, ops::rms_norm(tape.constant(Tensor::filled({1, 4}, 3.0)), gain));
  const Tensor neg = eval(tape, ops::rms_norm(tape.constant(Tensor::filled({1, 4}, -2.0)), gain));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(pos[i] - 1.0) <= 1e-6);
    CHECK(std::abs(neg[i] + 1.0) <= 1e-6);
  }
  const Tensor zero = eval(tape, ops::rms_norm(tape.constant(Tensor({1, 4})), gain));
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("rms_norm gradient matches central differences") {
  std::mt19937_64 rng(3);
  ParamVector p;
  p.add("x", random_tensor({3, 6}, rng));
  p.add("g", random_tensor({6}, rng));
  const Tensor w = random_tensor({3, 6}, rng);
  LossFn fn = [&](Tape& t, ParamBinding& bind) {
    return ops::sum(ops::mul(ops::rms_norm(bind("x"), bind("g")), t.constant(w)));
  };
  CHECK(max_rel(value_and_grad(fn, p).grad, central_diff(fn, p, 1e-5)) <= 1e-6);
}

TEST_CASE("attention, rope and embedding gradients") {
  std::mt19937_64 rng(4);
  ParamVector p;
  p.add("table", random_tensor({7, 8}, rng));
  p.add("wq", random_tensor({8, 8}, rng, 0.4));
  p.add("wk", random_tensor({8, 8}, rng, 0.4));
  p.add("wv", random_tensor({8, 8}, rng, 0.4));
  const std::vector<TokenId> ids{1, 4, 4, 6, 0};
  const Tensor w = random_tensor({5, 8}, rng);
  LossFn fn = [&](Tape& t, ParamBinding& bind) {
    Var x = ops::embedding(bind("table"), ids);
    Var q = ops::rope(ops::linear(x, bind("wq")), 2, 10000.0);
    Var k = ops::rope(ops::linear(x, bind("wk")), 2, 10000.0);
    Var v = ops::linear(x, bind("wv"));
    return ops::sum(ops::mul(ops::causal_attention(q, k, v, 2), t.constant(w)));
  };
  CHECK(max_rel(value_and_grad(fn, p).grad, central_diff(fn, p, 1e-5)) <= 1e-6);
}

TEST_CASE("causal attention ignores later positions") {
  std::mt19937_64 rng(5);
  Tape tape;
  Tensor q = random_tensor({4, 4}, rng), k = random_tensor({4, 4}, rng), v = random_tensor({4, 4}, rng);
  const Tensor a = eval(tape, ops::causal_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2));
  k.at(3, 0) += 10.0;
  v.at(3, 1) -= 10.0;
  const Tensor b = eval(tape, ops::causal_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(a.at(r, c) == b.at(r, c));
  }
}

TEST_CASE("cross entropy reference values") {
  Tape tape;
  const std::vector<TokenId> targets{3, 5};
  const std::vector<bool> mask{true, true};
  auto uniform = tape.constant(Tensor::filled({2, 8}, 0.7));
  CHECK(eval(tape, ops::softmax_cross_entropy(uniform, targets, mask)).item() ==
        doctest::Approx(std::log(8.0)).epsilon(1e-14));
  Tensor peaked({2, 8});
  peaked.at(0, 3) = 50.0;
  peaked.at(1, 5) = 50.0;
  CHECK(eval(tape, ops::softmax_cross_entropy(tape.constant(peaked), targets, mask)).item() <= 1e-12);
}

TEST_CASE("cross entropy matches a direct log-sum-exp") {
  std::mt19937_64 rng(6);
  const Tensor logits = random_tensor({5, 9}, rng, 3.0);
  const std::vector<TokenId> targets{0, 8, 2, 2, 7};
  const std::vector<bool> mask{true, false, true, true, true};
  double total = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    if (!mask[t]) continue;
    double m = -INFINITY;
    for (std::size_t j = 0; j < 9; ++j) m = std::max(m, logits.at(t, j));
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += std::exp(logits.at(t, j) - m);
    total += m + std::log(s) - logits.at(t, targets[t]);
    ++n;
  }
  Tape tape;
  auto l = tape.constant(logits);
  CHECK(std::abs(eval(tape, ops::softmax_cross_entropy(l, targets, mask)).item() - total / n) <= 1e-9);
  CHECK(std::abs(eval(tape, ops::softmax_cross_entropy(l, targets, mask, ops::Reduction::kSum)).item() -
                 total) <= 1e-9);
}

TEST_CASE("cross entropy gradient") {
  std::mt19937_64 rng(7);
  ParamVector p;
  p.add("z", random_tensor({3, 6}, rng));
  const std::vector<TokenId> targets{1, 0, 5};
  const std::vector<bool> mask{true, true, false};
  LossFn fn = [&](Tape&, ParamBinding& bind) {
    return ops::softmax_cross_entropy(bind("z"), targets, mask);
  };
  const auto vg = value_and_grad(fn, p);
  CHECK(max_rel(vg.grad, central_diff(fn, p, 1e-5)) <= 1e-6);
  for (std::size_t j = 0; j < 6; ++j) CHECK(vg.grad[0].at(2, j) == 0.0);
}

TEST_CASE("value_and_grad on half squared norm") {
  ParamVector p;
  p.add("p", Tensor::vector({1.5, -2.0, 0.25}));
  LossFn fn = [](Tape&, ParamBinding& bind) {
    return ops::scale(ops::sum(ops::mul(bind("p"), bind("p"))), 0.5);
  };
  const auto vg = value_and_grad(fn, p);
  CHECK(vg.value == doctest::Approx(0.5 * (2.25 + 4.0 + 0.0625)));
  CHECK(vg.grad[0] == p[0]);
}

TEST_CASE("unused segments get an exact zero gradient") {
  ParamVector p;
  p.add("used", Tensor::vector({1.0, 2.0}));
  p.add("unused", Tensor::vector({3.0}));
  LossFn fn = [](Tape&, ParamBinding& bind) { return ops::sum(ops::silu(bind("used"))); };
  const auto vg = value_and_grad(fn, p);
  CHECK(vg.touched[0]);
  CHECK_FALSE(vg.touched[1]);
  CHECK(vg.grad[1][0] == 0.0);
  CHECK_FALSE(std::signbit(vg.grad[1][0]));
}

TEST_CASE("finite_diff_grad reference cases") {
  ParamVector p;
  p.add("p", Tensor::vector({3.0}));
  LossFn quad = [](Tape&, ParamBinding& bind) {
    return ops::scale(ops::sum(ops::mul(bind("p"), bind("p"))), 0.5);
  };
  CHECK(std::abs(finite_diff_grad(quad, p, 1e-4)[0][0] - 3.0) <= 1e-7);
  LossFn constant = [](Tape& t, ParamBinding&) { return t.constant(Tensor::scalar(5.0)); };
  CHECK(finite_diff_grad(constant, p, 1e-4)[0][0] == 0.0);
  CHECK(value_and_grad(constant, p).grad[0][0] == 0.0);
}

TEST_CASE("finite_diff_hessian_block on analytic functions") {
  ParamVector p;
  p.add("a", Tensor::vector({0.3, -1.2}));
  p.add("b", Tensor::vector({2.0, 0.7}));
  LossFn separable = [](Tape&, ParamBinding& bind) {
    return ops::add(ops::sum(ops::mul(bind("a"), bind("a"))), ops::sum(ops::mul(bind("b"), bind("b"))));
  };
  CHECK(finite_diff_hessian_block(separable, p, {"a"}, {"b"}, 1e-3, 16, 1) <= 1e-6);
  ParamVector q;
  q.add("a", Tensor::vector({0.4}));
  q.add("b", Tensor::vector({-0.9}));
  LossFn product = [](Tape&, ParamBinding& bind) { return ops::sum(ops::mul(bind("a"), bind("b"))); };
  CHECK(std::abs(finite_diff_hessian_block(product, q, {"a"}, {"b"}, 1e-3, 4, 1) - 1.0) <= 1e-4);
}

TEST_CASE("non-finite values name the failing op") {
  Tape tape;
  auto big = tape.constant(Tensor::vector({1e308, 1e308}));
  try {
    ops::scale(big, 10.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("backward fault hook perturbs only while alive") {
  ParamVector p;
  p.add("x", Tensor::vector({0.5, -1.0}));
  LossFn fn = [](Tape&, ParamBinding& bind) { return ops::sum(ops::silu(bind("x"))); };
  const auto clean = value_and_grad(fn, p).grad;
  {
    ScopedBackwardFault fault("silu", 2.0);
    const auto bad = value_and_grad(fn, p).grad;
    CHECK(bad[0][0] == doctest::Approx(2.0 * clean[0][0]));
  }
  CHECK(value_and_grad(fn, p).grad == clean);
}

TEST_CASE("param vector flatten round trip") {
  std::mt19937_64 rng(8);
  ParamVector p;
  p.add("a", random_tensor({2, 3}, rng));
  p.add("b", random_tensor({4}, rng));
  CHECK(p.total_size() == 10);
  ParamVector q = p.zeros_like();
  q.unflatten(p.flatten());
  CHECK(q == p);
  CHECK_THROWS(p.add("a", Tensor::vector({1.0})));
  CHECK_THROWS(p.index_of("missing"));
}

}  // TEST_SUITE
