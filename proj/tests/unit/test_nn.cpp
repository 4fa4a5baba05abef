#include <doctest.h>

#include <cmath>
#include <random>

#include "drgn/core/errors.hpp"
#include "drgn/nn/ops.hpp"
#include "support/oracles.hpp"

using namespace drgn::nn;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d matches the direct-loop oracle") {
  for (int stride : {1, 2}) {
    for (int k : {1, 3, 5}) {
      const Tensor x = random_tensor({2, 3, 9, 8}, 1);
      const Tensor w = random_tensor({4, 3, k, k}, 2);
      const Tensor b = random_tensor({4}, 3);
      const int pad = k / 2;
      const Tensor got = conv2d(Var(x), Var(w), Var(b), stride, pad).value();
      CHECK(max_abs_diff(got, oracle::conv2d(x, w, b, stride, pad)) < 1e-12);
    }
  }
}

TEST_CASE("conv_transpose2d matches the scatter oracle") {
  const Tensor x = random_tensor({2, 3, 5, 4}, 4);
  const Tensor w = random_tensor({3, 2, 4, 4}, 5);
  const Tensor b = random_tensor({2}, 6);
  const Tensor got = conv_transpose2d(Var(x), Var(w), Var(b), 2, 1).value();
  CHECK(got.shape() == Shape{2, 2, 10, 8});
  CHECK(max_abs_diff(got, oracle::conv_transpose2d(x, w, b, 2, 1)) < 1e-12);
}

TEST_CASE("reflect_index folds like mirror-101") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(9, 5) == 1);
  CHECK(reflect_index(-7, 3) == 1);
  CHECK(reflect_index(4, 1) == 0);
}

TEST_CASE("elementwise gradients match finite differences") {
  const Tensor a = random_tensor({2, 3}, 7, 0.2, 1.0);
  const Tensor b = random_tensor({2, 3}, 8, 0.2, 1.0);
  auto check = [&](auto f) { CHECK(oracle::gradient_error(f, {a, b}) < 1e-6); };
  check([](const std::vector<Var>& v) { return sum(mul(v[0], v[1])); });
  check([](const std::vector<Var>& v) { return sum(div(v[0], add_scalar(v[1], 0.5))); });
  check([](const std::vector<Var>& v) { return mean(sqrt(add(square(v[0]), v[1]))); });
  check([](const std::vector<Var>& v) { return sum(mul(tanh(v[0]), sigmoid(v[1]))); });
  check([](const std::vector<Var>& v) { return sum(log_clamped(add(v[0], v[1]), 1e-12)); });
  check([](const std::vector<Var>& v) { return sum(mul(leaky_relu(sub(v[0], v[1]), 0.2), v[0])); });
}

TEST_CASE("convolution gradients match finite differences") {
  const Tensor x = random_tensor({1, 2, 6, 6}, 9);
  const Tensor w = random_tensor({3, 2, 3, 3}, 10);
  const Tensor b = random_tensor({3}, 11);
  auto f = [](const std::vector<Var>& v) {
    return sum(square(conv2d(v[0], v[1], v[2], 2, 1)));
  };
  CHECK(oracle::gradient_error(f, {x, w, b}) < 1e-6);

  const Tensor wt = random_tensor({2, 3, 4, 4}, 12);
  auto g = [](const std::vector<Var>& v) {
    return sum(square(conv_transpose2d(v[0], v[1], v[2], 2, 1)));
  };
  CHECK(oracle::gradient_error(g, {x, wt, b}) < 1e-6);
}

TEST_CASE("channel ops and filters have correct gradients") {
  const Tensor x = random_tensor({2, 3, 7, 6}, 13);
  const Tensor s = random_tensor({2, 3, 1, 1}, 14);
  Tensor k({3, 3});
  for (std::size_t i = 0; i < 9; ++i) k[i] = 0.05 * static_cast<double>(i + 1);
  auto f = [&](const std::vector<Var>& v) {
    const Var a = filter2d(v[0], k, 1, Border::reflect);
    const Var b = filter2d(v[0], k, 2, Border::valid);
    return add(sum(square(scale_channels(a, v[1]))),
               add(sum(square(channel_mean(b))), sum(square(global_avg_pool(v[0])))));
  };
  CHECK(oracle::gradient_error(f, {x, s}) < 1e-6);
  auto g = [](const std::vector<Var>& v) {
    return sum(mul(concat_channels({v[0], square(v[0])}), concat_channels({v[0], v[0]})));
  };
  CHECK(oracle::gradient_error(g, {x}) < 1e-6);
}

TEST_CASE("clamp passes gradient only inside the range") {
  Var x(Tensor({3}, std::vector<double>{-0.5, 0.5, 1.5}), true);
  backward(sum(clamp(x, 0.0, 1.0)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("shared subgraphs accumulate gradients") {
  Var x(Tensor::scalar(3.0), true);
  const Var y = mul(x, x);
  backward(add(y, mul_scalar(y, 2.0)));  // 3 x^2
  CHECK(x.grad().item() == doctest::Approx(18.0));
}

TEST_CASE("no-grad mode records nothing") {
  Var x(Tensor::scalar(2.0), true);
  Var y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  backward(y);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("binary ops reject mismatched shapes") {
  Var a(Tensor({2, 2}));
  Var b(Tensor({4}));
  CHECK_THROWS_AS(add(a, b), drgn::ShapeError);
  CHECK_THROWS_AS(backward(Var(Tensor({2}), true)), drgn::ShapeError);
}
