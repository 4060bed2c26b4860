#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "apss/gradcheck.hpp"
#include "apss/ops.hpp"
#include "apss/tensor.hpp"
#include "test_util.hpp"

using namespace apss;
using TD = Tensor<double>;
using testutil::random_tensor;

TEST_CASE("elementwise values") {
  auto a = TD::from_data({2}, {1, 2});
  auto b = TD::from_data({2}, {3, 4});
  auto c = add(a, b);
  CHECK(c.data()[0] == 4);
  CHECK(c.data()[1] == 6);
  CHECK(sigmoid(TD::scalar(1.0)).item() == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(clamp_min(TD::from_data({3}, {-1, 0.5, 2}), 0.0).data()[0] == 0.0);
  CHECK(abs(TD::scalar(-2.5)).item() == 2.5);
}

TEST_CASE("broadcast over leading singleton dims only") {
  auto a = random_tensor({2, 3}, 1);
  auto b = TD::from_data({3}, {10, 20, 30});
  auto c = add(a, b);
  REQUIRE(c.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.at({i, j}) == doctest::Approx(a.at({i, j}) + b.at({j})));
  CHECK(broadcast_shape({4, 1, 3}, {3}) == Shape{4, 1, 3});
  CHECK_THROWS_AS(add(a, TD::zeros({2})), ShapeError);
  CHECK_THROWS_AS(add(a, TD::zeros({2, 1})), ShapeError);
}

TEST_CASE("backward basics") {
  auto x = TD::scalar(3.0, true);
  mul(x, x).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  auto v = TD::full({5}, 2.0, true);
  sum(v).backward();
  for (auto g : v.grad()) CHECK(g == 1.0);

  auto w = TD::from_data({2}, {1, 2}, true);
  sum(mul(w, w)).backward();
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));

  auto m = TD::zeros({4}, true);
  mean(m).backward();
  for (auto g : m.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("leaf grads accumulate until zeroed") {
  auto x = TD::from_data({2}, {1, -1}, true);
  sum(mul_scalar(x, 3.0)).backward();
  sum(mul_scalar(x, 3.0)).backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  x.zero_grad();
  sum(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("shared subexpression is visited once") {
  auto x = TD::scalar(2.0, true);
  auto y = mul(x, x);
  auto z = add(y, y);  // 2x^2
  z.backward();
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("backward errors") {
  auto x = TD::zeros({3}, true);
  CHECK_THROWS_AS(x.backward(), UsageError);
  CHECK_THROWS_AS(TD::scalar(1.0).backward(), UsageError);
}

TEST_CASE("no-grad guard stops tracking") {
  auto x = TD::scalar(1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("debug checks trip on zero division and non-finite values") {
  const bool before = debug_checks();
  set_debug_checks(true);
  CHECK_THROWS_AS(div(TD::scalar(1.0), TD::scalar(0.0)), NumericalError);
  CHECK_THROWS_AS(log(TD::scalar(-1.0)), NumericalError);
  set_debug_checks(false);
  CHECK(std::isinf(div(TD::scalar(1.0), TD::scalar(0.0)).item()));
  set_debug_checks(before);
}

TEST_CASE("matmul against naive oracle") {
  auto a = random_tensor({3, 4}, 2);
  auto b = random_tensor({4, 2}, 3);
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(std::abs(c.at({i, j}) - s) <= 1e-12);
    }

  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto id = TD::from_data({3, 3}, eye);
  auto m = random_tensor({3, 5}, 4);
  CHECK(testutil::max_abs_diff(matmul(id, m).data(), m.data()) == 0.0);

  CHECK(matmul(TD::from_data({1, 1}, {3}), TD::from_data({1, 1}, {-2})).item() == -6.0);
  CHECK_THROWS_AS(matmul(random_tensor({2, 3}, 1), random_tensor({2, 3}, 1)), ShapeError);
}

TEST_CASE("wide double matmul") {
  for (std::size_t n : {193u, 300u}) {
    auto a = random_tensor({5, 16}, 50);
    auto b = random_tensor({16, n}, 51);
    auto c = matmul(a, b);
    double worst = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 16; ++k) s += a.at({i, k}) * b.at({k, j});
        worst = std::max(worst, std::abs(c.at({i, j}) - s));
      }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("batched matmul broadcasts the batch") {
  auto a = random_tensor({2, 3, 4}, 5);
  auto b = random_tensor({4, 2}, 6);
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 2});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({k, j});
        CHECK(std::abs(c.at({n, i, j}) - s) <= 1e-12);
      }
}

TEST_CASE("softmax") {
  auto u = softmax(TD::full({1, 4}, 0.7), 1);
  for (auto v : u.data()) CHECK(v == doctest::Approx(0.25));
  auto p = softmax(TD::from_data({2}, {0.0, std::log(3.0)}), 0);
  CHECK(p.data()[0] == doctest::Approx(0.25));
  CHECK(p.data()[1] == doctest::Approx(0.75));
  auto big = softmax(TD::from_data({2}, {1000.0, 1000.0}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5));
  auto r = random_tensor({3, 5}, 7, -3, 3);
  auto s = softmax(r, 0);
  for (std::size_t j = 0; j < 5; ++j) {
    double total = 0;
    for (std::size_t i = 0; i < 3; ++i) total += s.at({i, j});
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("reshape and permute") {
  auto x = random_tensor({2, 3, 4}, 8);
  auto y = permute(permute(x, {1, 2, 0}), {2, 0, 1});
  CHECK(y.shape() == x.shape());
  CHECK(testutil::max_abs_diff(y.data(), x.data()) == 0.0);

  auto t = permute(permute(permute(x, {2, 0, 1}), {2, 0, 1}), {2, 0, 1});
  CHECK(t.shape() == x.shape());
  CHECK(testutil::max_abs_diff(t.data(), x.data()) == 0.0);

  auto p = permute(x, {2, 0, 1});
  REQUIRE(p.shape() == Shape{4, 2, 3});
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));

  CHECK(reshape(x, {6, 4}).at({5, 3}) == x.at({1, 2, 3}));
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
  CHECK_THROWS_AS(permute(x, {0, 0, 1}), ShapeError);
}

TEST_CASE("permute backward is the inverse permutation") {
  auto x = random_tensor({2, 3, 4}, 9, -1, 1, true);
  auto g = random_tensor({4, 2, 3}, 10);
  sum(mul(permute(x, {2, 0, 1}), g)).backward();
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c) CHECK(x.grad()[(a * 3 + b) * 4 + c] == g.at({c, a, b}));
}

TEST_CASE("reductions") {
  CHECK(sum(TD::full({2, 3}, 1.0)).item() == 6.0);
  CHECK(reduce(TD::from_data({2}, {3, 4}), ReduceKind::rms, {}).item() ==
        doctest::Approx(std::sqrt(12.5 + 1e-8)).epsilon(1e-12));
  auto x = random_tensor({2, 3, 4}, 11);
  auto r = reduce(x, ReduceKind::sum, {1});
  REQUIRE(r.shape() == Shape{2, 4});
  CHECK(r.at({1, 2}) == doctest::Approx(x.at({1, 0, 2}) + x.at({1, 1, 2}) + x.at({1, 2, 2})));
  auto m = reduce(x, ReduceKind::mean, {0, 2});
  REQUIRE(m.shape() == Shape{3});
  CHECK_THROWS_AS(reduce(x, ReduceKind::sum, {3}), ShapeError);
}

TEST_CASE("concat and slice") {
  auto a = random_tensor({2, 3}, 12);
  auto b = random_tensor({2, 2}, 13);
  auto c = concat<double>({a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 5});
  CHECK(c.at({1, 4}) == b.at({1, 1}));
  auto back = slice(c, 1, 0, 3);
  CHECK(testutil::max_abs_diff(back.data(), a.data()) == 0.0);
  CHECK_THROWS_AS(concat<double>({a, random_tensor({3, 3}, 1)}, 1), ShapeError);
  CHECK_THROWS_AS(slice(c, 1, 3, 6), ShapeError);
}

TEST_CASE("atan2 range and axis cases") {
  const double pi = std::numbers::pi;
  auto y = TD::from_data({6}, {0, 1, 0, -1, 0, -0.0});
  auto x = TD::from_data({6}, {1, 0, -1, 0, 0, -1});
  auto a = atan2(y, x);
  CHECK(a.data()[0] == 0.0);
  CHECK(a.data()[1] == doctest::Approx(pi / 2));
  CHECK(a.data()[2] == doctest::Approx(pi));
  CHECK(a.data()[3] == doctest::Approx(-pi / 2));
  CHECK(a.data()[4] == 0.0);
  CHECK(a.data()[5] == doctest::Approx(pi));  // -pi maps to pi
  auto r = atan2(random_tensor({200}, 14), random_tensor({200}, 15));
  for (auto v : r.data()) CHECK((v > -pi && v <= pi));
}

TEST_CASE("atan2 gradient is zero at the origin") {
  auto y = TD::zeros({1}, true);
  auto x = TD::zeros({1}, true);
  sum(atan2(y, x)).backward();
  CHECK(y.grad()[0] == 0.0);
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("finite-difference checks of primitive ops") {
  const double tol = 1e-6;
  auto check = [&](const std::string& name, const std::function<TD(const TD&)>& f, TD x) {
    auto r = grad_check(name, f, x, tol);
    INFO(name << " max_rel " << r.max_rel_error);
    CHECK(r.passed);
  };
  check("sin", [](const TD& x) { return sum(sin(x)); }, random_tensor({6}, 20));
  check("cos", [](const TD& x) { return sum(cos(x)); }, random_tensor({6}, 21));
  check("exp", [](const TD& x) { return sum(exp(x)); }, random_tensor({6}, 22));
  check("log", [](const TD& x) { return sum(log(x)); }, random_tensor({6}, 23, 0.2, 2.0));
  check("sigmoid", [](const TD& x) { return sum(sigmoid(x)); }, random_tensor({6}, 24, -3, 3));
  check("sqrt", [](const TD& x) { return sum(sqrt(x)); }, random_tensor({6}, 25, 0.2, 2.0));
  check("abs", [](const TD& x) { return sum(abs(x)); }, random_tensor({6}, 26, 0.2, 2.0));
  check("square", [](const TD& x) { return sum(square(x)); }, random_tensor({6}, 27));
  check("div", [](const TD& x) { return sum(div(TD::full({6}, 2.0), x)); }, random_tensor({6}, 28, 0.5, 2.0));
  check("softmax", [](const TD& x) { return sum(mul(softmax(x, 1), TD::from_data({4}, {1, -2, 3, 0.5}))); },
        random_tensor({3, 4}, 29));
  check("softmax_sum", [](const TD& x) { return sum(softmax(x, 0)); }, random_tensor({5}, 29));
  check("rms", [](const TD& x) { return sum(reduce(x, ReduceKind::rms, {1})); }, random_tensor({3, 4}, 30));
  check("permute", [](const TD& x) { return sum(mul(permute(x, {1, 0}), TD::from_data({3, 2}, {1, 2, 3, 4, 5, 6}))); },
        random_tensor({2, 3}, 31));

  auto r = grad_check(
      "matmul", [](const std::vector<TD>& in) { return sum(sin(matmul(in[0], in[1]))); },
      {random_tensor({2, 3, 4}, 32), random_tensor({4, 2}, 33)}, tol);
  CHECK(r.passed);
  auto b = grad_check(
      "broadcast_mul", [](const std::vector<TD>& in) { return sum(sin(mul(in[0], in[1]))); },
      {random_tensor({2, 3}, 34), random_tensor({3}, 35)}, tol);
  CHECK(b.passed);
  auto cs = grad_check(
      "concat_slice",
      [](const std::vector<TD>& in) { return sum(square(slice(concat<double>({in[0], in[1]}, 0), 0, 1, 3))); },
      {random_tensor({2, 3}, 36), random_tensor({2, 3}, 37)}, tol);
  CHECK(cs.passed);
}

TEST_CASE("grad_check reports a wrong gradient") {
  // sum(x) with the values of x*x: analytic gradient 1, numeric 2x.
  auto r = grad_check(
      "broken", [](const TD& x) { return add(sum(x), sum(mul(x, x)).detach()); }, random_tensor({4}, 40, 1.0, 2.0),
      1e-6);
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("gradients are deterministic") {
  auto run = [] {
    auto x = random_tensor({3, 4}, 41, -1, 1, true);
    auto w = random_tensor({4, 5}, 42, -1, 1, true);
    sum(softmax(matmul(x, w), 1)).backward();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(run() == run());
}
