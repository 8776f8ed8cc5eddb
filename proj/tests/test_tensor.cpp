#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>

#include "demo/rng.hpp"
#include "demo/tensor.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace demo;
using demo::testing::input_grad_max_rel_error;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -2.0,
                                  double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul identity and shape checks") {
  Tape tape;
  const Tensor eye = tape.constant({2, 2}, {1, 0, 0, 1});
  const Tensor v = tape.constant({2, 2}, {3, -1, 2, 5});
  const Tensor out = matmul(eye, v);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.val(i) == v.val(i));
  CHECK_THROWS_AS(matmul(eye, tape.constant({3, 1}, {1, 2, 3})),
                  ShapeMismatch);
}

TEST_CASE("reduce_sum of zeros has unit gradient") {
  Tape tape;
  const Tensor z = tape.zeros({2, 3}, true);
  const Tensor s = reduce_sum(z);
  CHECK(s.scalar() == 0.0);
  tape.backward(s);
  for (std::size_t i = 0; i < 6; ++i) CHECK(z.grad_at(i) == 1.0);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(42);
  const auto b_vals = random_values(8, rng);
  const auto err = input_grad_max_rel_error(
      [&](Tape& t, const Tensor& x) {
        const Tensor b = t.constant({4, 2}, b_vals);
        return reduce_sum(mul(matmul(x, b), matmul(x, b)));
      },
      {3, 4}, random_values(12, rng));
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(7);
  for (int draw = 0; draw < 5; ++draw) {
    const auto other = random_values(6, rng, 0.5, 2.0);
    const auto x0 = random_values(6, rng, 0.3, 2.0);
    const auto check = [&](auto f) {
      return input_grad_max_rel_error(f, {2, 3}, x0);
    };
    CHECK(check([&](Tape& t, const Tensor& x) {
            return reduce_sum(mul(x, t.constant({2, 3}, other)));
          }) < 1e-6);
    CHECK(check([&](Tape& t, const Tensor& x) {
            return reduce_sum(div(t.constant({2, 3}, other), x));
          }) < 1e-6);
    CHECK(check([&](Tape& t, const Tensor& x) {
            (void)t;
            return reduce_mean(square(sub(x, t.constant({2, 3}, other))));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(mul(sigmoid(x), tanh_t(x)));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(exp_t(scale(x, 0.3)));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(log_t(add_scalar(square(x), 1.0)));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(sqrt_t(add_scalar(square(x), 0.1)));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(mul(sin_t(x), cos_t(x)));
          }) < 1e-6);
    CHECK(check([&](Tape&, const Tensor& x) {
            return reduce_sum(softplus(x));
          }) < 1e-6);
  }
}

TEST_CASE("structural op gradients: slices, transpose, reshape, means") {
  Rng rng(21);
  const auto x0 = random_values(12, rng);
  CHECK(input_grad_max_rel_error(
            [&](Tape&, const Tensor& x) {
              const Tensor a = slice_rows(x, 0, 2);
              const Tensor b = slice_rows(x, 1, 2);
              return reduce_sum(mul(a, b));
            },
            {3, 4}, x0) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [&](Tape&, const Tensor& x) {
              return reduce_sum(square(matmul(x, transpose(x))));
            },
            {3, 4}, x0) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [&](Tape&, const Tensor& x) {
              return reduce_mean(square(reshape(x, {4, 3})));
            },
            {3, 4}, x0) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [&](Tape&, const Tensor& x) {
              return reduce_sum(square(mean_rows(x)));
            },
            {3, 4}, x0) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [&](Tape&, const Tensor& x) {
              return reduce_sum(square(sum_cols(x)));
            },
            {3, 4}, x0) < 1e-6);
}

TEST_CASE("concat and slice round out gradients") {
  Rng rng(22);
  const auto x0 = random_values(12, rng);
  const auto err = input_grad_max_rel_error(
      [&](Tape& t, const Tensor& x) {
        const Tensor left = slice_cols(x, 0, 2);
        const Tensor right = slice_cols(x, 2, 2);
        const std::array<Tensor, 2> parts = {mul(left, right), neg(left)};
        const Tensor joined = concat_cols(parts);
        const std::array<Tensor, 2> stacked = {joined,
                                               scale(joined, -0.5)};
        return reduce_mean(square(concat_rows(stacked)));
      },
      {3, 4}, x0);
  CHECK(err < 1e-6);
}

TEST_CASE("softmax rows: normalization, shift invariance, gradient") {
  Tape tape;
  const Tensor two = tape.constant({1, 2}, {0.0, 0.0});
  const Tensor sm = softmax(two);
  CHECK(sm.val(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm.val(1) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(5);
  const auto logits = random_values(8, rng, -3, 3);
  const Tensor x = tape.constant({2, 4}, logits);
  const Tensor y = softmax(x);
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += y.val(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  auto shifted = logits;
  for (double& v : shifted) v += 123.25;
  const Tensor ys = softmax(tape.constant({2, 4}, shifted));
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(std::abs(ys.val(i) - y.val(i)) < 1e-12);

  const auto w = random_values(8, rng);
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& in) {
              return reduce_sum(mul(softmax(in), t.constant({2, 4}, w)));
            },
            {2, 4}, logits) < 1e-6);
}

TEST_CASE("gelu: exact values and gradient") {
  Tape tape;
  const Tensor zero = tape.constant({1, 2}, {0.0, 10.0});
  const Tensor g = gelu(zero);
  CHECK(g.val(0) == 0.0);
  CHECK(std::abs(g.val(1) - 10.0) < 1e-6);  // asymptote

  for (double x : {-2.0, -0.5, 0.3, 4.0}) {
    CHECK(input_grad_max_rel_error(
              [](Tape&, const Tensor& in) { return reduce_sum(gelu(in)); },
              {1, 2}, {x, 0.7 * x}) < 1e-6);
  }
}

TEST_CASE("glu: identity value path and zero gate bias halves the input") {
  Tape tape;
  const Tensor x = tape.constant({2, 2}, {1, -2, 0.5, 3});
  const Tensor eye = tape.constant({2, 2}, {1, 0, 0, 1});
  const Tensor zerov = tape.zeros({1, 2});
  const Tensor zerow = tape.zeros({2, 2});
  const Tensor out = glu(x, eye, zerov, zerow, zerov);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.val(i) == doctest::Approx(0.5 * x.val(i)).epsilon(1e-15));

  const Tensor zx = tape.zeros({2, 2});
  const Tensor out0 = glu(zx, eye, zerov, zerow, zerov);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out0.val(i) == 0.0);

  // Random case against a scalar hand evaluation.
  Rng rng(9);
  const auto xv = random_values(4, rng);
  const auto wav = random_values(4, rng);
  const auto bav = random_values(2, rng);
  const auto wbv = random_values(4, rng);
  const auto bbv = random_values(2, rng);
  const Tensor out2 =
      glu(tape.constant({2, 2}, xv), tape.constant({2, 2}, wav),
          tape.constant({1, 2}, bav), tape.constant({2, 2}, wbv),
          tape.constant({1, 2}, bbv));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      const double lin = xv[static_cast<std::size_t>(2 * r)] * wav[static_cast<std::size_t>(c)] +
                         xv[static_cast<std::size_t>(2 * r + 1)] * wav[static_cast<std::size_t>(2 + c)] + bav[static_cast<std::size_t>(c)];
      const double gate = xv[static_cast<std::size_t>(2 * r)] * wbv[static_cast<std::size_t>(c)] +
                          xv[static_cast<std::size_t>(2 * r + 1)] * wbv[static_cast<std::size_t>(2 + c)] + bbv[static_cast<std::size_t>(c)];
      const double expect = lin / (1.0 + std::exp(-gate));
      CHECK(out2.val(r, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm: standardization and gradient") {
  Tape tape;
  const Tensor constant_row = tape.constant({1, 4}, {5, 5, 5, 5});
  const Tensor unit_gain = tape.constant({1, 4}, {1, 1, 1, 1});
  const Tensor zero_bias = tape.zeros({1, 4});
  const Tensor n = layer_norm(constant_row, unit_gain, zero_bias);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(n.val(i)) < 1e-10);

  // An already standardized row passes through nearly unchanged.
  const double a = std::sqrt(2.0 / 2.0);
  const Tensor standardized = tape.constant({1, 2}, {-a, a});
  const Tensor gain2 = tape.constant({1, 2}, {1, 1});
  const Tensor bias2 = tape.zeros({1, 2});
  const Tensor n2 = layer_norm(standardized, gain2, bias2);
  CHECK(n2.val(0) == doctest::Approx(-a).epsilon(1e-5));
  CHECK(n2.val(1) == doctest::Approx(a).epsilon(1e-5));

  Rng rng(11);
  const auto x0 = random_values(8, rng);
  const auto w = random_values(8, rng);
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& x) {
              const Tensor g = t.constant({1, 4}, {1.2, 0.8, -0.5, 1.0});
              const Tensor b = t.constant({1, 4}, {0.1, -0.2, 0.3, 0.0});
              return reduce_sum(mul(layer_norm(x, g, b),
                                    t.constant({2, 4}, w)));
            },
            {2, 4}, x0) < 1e-6);

  CHECK_THROWS_AS(layer_norm(tape.constant({2, 1}, {1, 2}),
                             tape.constant({1, 1}, {1}),
                             tape.constant({1, 1}, {0})),
                  ShapeMismatch);
}

TEST_CASE("broadcast helpers") {
  Rng rng(3);
  const auto x0 = random_values(6, rng);
  const auto v0 = random_values(3, rng);
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& x) {
              return reduce_sum(
                  square(add_rowvec(x, t.tensor({1, 3}, v0, false))));
            },
            {2, 3}, x0) < 1e-6);
  // Gradient with respect to the broadcast vector itself.
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& v) {
              return reduce_sum(
                  square(mul_rowvec(t.tensor({2, 3}, x0, false), v)));
            },
            {1, 3}, v0) < 1e-6);
  const auto c0 = random_values(2, rng);
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& v) {
              return reduce_sum(
                  square(mul_colvec(t.tensor({2, 3}, x0, false), v)));
            },
            {2, 1}, c0) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [&](Tape& t, const Tensor& s) {
              return reduce_sum(
                  mul_scalar_t(t.tensor({2, 3}, x0, false), s));
            },
            {1, 1}, {0.7}) < 1e-6);
}

TEST_CASE("clamp family subgradients") {
  CHECK(input_grad_max_rel_error(
            [](Tape&, const Tensor& x) {
              return reduce_sum(clamp(x, -1.0, 1.0));
            },
            {1, 3}, {-2.0, 0.5, 3.0}) < 1e-6);
  CHECK(input_grad_max_rel_error(
            [](Tape&, const Tensor& x) {
              return reduce_sum(square(clamp_min_abs(x, 0.5)));
            },
            {1, 3}, {-2.0, 0.2, 3.0}) < 1e-6);
  Tape tape;
  const Tensor t = clamp_min_abs(tape.constant({1, 4}, {0.0, 0.3, -0.1, 2.0}),
                                 0.5);
  CHECK(t.val(0) == 0.5);
  CHECK(t.val(1) == 0.5);
  CHECK(t.val(2) == -0.5);
  CHECK(t.val(3) == 2.0);
}

TEST_CASE("non-finite values trip a checked error") {
  Tape tape;
  const Tensor x = tape.constant({1, 2}, {1e308, 1e308});
  CHECK_THROWS_AS(mul(x, x), NonFiniteValue);
  CHECK_THROWS_AS(log_t(tape.constant({1, 1}, {-1.0})), NonFiniteValue);
}

TEST_CASE("tape determinism: identical seeds, identical results") {
  const auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape tape;
    const Tensor x = tape.tensor({3, 3}, random_values(9, rng), true);
    const Tensor y =
        reduce_sum(mul(softmax(matmul(x, x)), gelu(x)));
    tape.backward(y);
    std::vector<double> out{y.scalar()};
    for (std::size_t i = 0; i < 9; ++i) out.push_back(x.grad_at(i));
    return out;
  };
  const auto a = run(99), b = run(99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("param leasing accumulates into Param::grad") {
  ParamStore store;
  Param& p = store.create("w", {1, 2}, {2.0, -1.0});
  Tape tape;
  const Tensor w = tape.lease(p);
  const Tensor w2 = tape.lease(p);  // same leaf
  const Tensor loss = reduce_sum(mul(w, w2));
  tape.backward(loss);
  REQUIRE(p.grad.size() == 2);
  CHECK(p.grad[0] == doctest::Approx(4.0));   // d(w^2)/dw = 2w
  CHECK(p.grad[1] == doctest::Approx(-2.0));
}
