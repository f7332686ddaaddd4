#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "layers.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kafshot;
using testutil::error_kind;
using testutil::pick;
using testutil::random_tensor;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double inner(const Tensor& a, const Tensor& b) { return dot(a, b); }

}  // namespace

TEST_CASE("conv2d matches direct summation on random instances") {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 3), f = pick(rng, 1, 4);
    const std::size_t k = pick(rng, 1, 4), stride = pick(rng, 1, 3), pad = pick(rng, 0, 2);
    const std::size_t h = pick(rng, k, 9), w = pick(rng, k, 9);
    Tensor x = random_tensor({n, c, h, w}, rng);
    Tensor wt = random_tensor({f, c, k, k}, rng);
    Tensor b = random_tensor({f}, rng);
    const Conv2dGeometry g{stride, pad};
    worst = std::max(worst, max_abs_diff(conv2d(x, wt, b, g), oracle::conv2d(x, wt, b, stride, pad)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("conv2d backward satisfies the adjoint identities") {
  // y - b is bilinear in (x, w), so <G, y - b> = <x, dx> = <w, dw> exactly.
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), f = pick(rng, 1, 3);
    const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const std::size_t h = pick(rng, k, 7), w = pick(rng, k, 7);
    Tensor x = random_tensor({n, c, h, w}, rng);
    Tensor wt = random_tensor({f, c, k, k}, rng);
    Tensor zero({f});
    const Conv2dGeometry g{stride, pad};
    Tensor y = conv2d(x, wt, zero, g);
    Tensor go = random_tensor(y.shape(), rng);
    Conv2dGrads gr = conv2d_backward(x, wt, go, g);
    const double ref = inner(go, y);
    CHECK(std::abs(inner(x, gr.input) - ref) <= 1e-10 * (1.0 + std::abs(ref)));
    CHECK(std::abs(inner(wt, gr.weights) - ref) <= 1e-10 * (1.0 + std::abs(ref)));
    // bias gradient is the per-filter sum of G
    for (std::size_t o = 0; o < f; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < y.dim(2); ++r)
          for (std::size_t q = 0; q < y.dim(3); ++q) s += go.at(i, o, r, q);
      CHECK(gr.bias[o] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d output extent and errors") {
  Tensor x({1, 1, 28, 28});
  CHECK(conv2d(x, Tensor({20, 1, 5, 5}), Tensor({20})).shape() == Shape{1, 20, 24, 24});
  CHECK(conv2d(x, Tensor({4, 1, 3, 3}), Tensor({4}), {1, 1}).shape() == Shape{1, 4, 28, 28});
  CHECK(conv2d(x, Tensor({4, 1, 3, 3}), Tensor({4}), {2, 0}).shape() == Shape{1, 4, 13, 13});
  CHECK(error_kind([&] { conv2d(x, Tensor({4, 2, 3, 3}), Tensor({4})); }) == ErrorKind::dimension);
  CHECK(error_kind([&] { conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1})); }) ==
        ErrorKind::dimension);
  CHECK(error_kind([&] { conv2d(x, Tensor({1, 1, 3, 3}), Tensor({1}), {0, 0}); }) ==
        ErrorKind::parameter);
}

TEST_CASE("maxpool2d matches a window scan and routes gradients to the argmax") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t win = pick(rng, 1, 3);
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3);
    const std::size_t h = win * pick(rng, 1, 4), w = win * pick(rng, 1, 4);
    Tensor x = random_tensor({n, c, h, w}, rng);
    PoolResult pr = maxpool2d(x, win);
    REQUIRE(pr.output.shape() == Shape{n, c, h / win, w / win});
    Tensor go = random_tensor(pr.output.shape(), rng);
    Tensor gx = maxpool2d_backward(go, pr.argmax, x.shape());
    Tensor expect_gx(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < h / win; ++r)
          for (std::size_t q = 0; q < w / win; ++q) {
            double best = -INFINITY;
            std::size_t br = 0, bq = 0;
            for (std::size_t u = 0; u < win; ++u)
              for (std::size_t v = 0; v < win; ++v)
                if (x.at(i, ch, r * win + u, q * win + v) > best) {
                  best = x.at(i, ch, r * win + u, q * win + v);
                  br = r * win + u;
                  bq = q * win + v;
                }
            CHECK(pr.output.at(i, ch, r, q) == best);
            expect_gx.at(i, ch, br, bq) += go.at(i, ch, r, q);
          }
    CHECK(gx == expect_gx);
  }
}

TEST_CASE("maxpool2d ties go to the first maximum") {
  Tensor x({1, 1, 2, 2}, {1.0, 3.0, 3.0, 3.0});
  PoolResult pr = maxpool2d(x, 2);
  CHECK(pr.argmax == std::vector<std::size_t>{1});
  CHECK(error_kind([&] { maxpool2d(Tensor({1, 1, 3, 4}), 2); }) == ErrorKind::dimension);
}

TEST_CASE("linear matches a double loop and its adjoint") {
  std::mt19937_64 rng(104);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t n = pick(rng, 1, 5), in = pick(rng, 1, 7), out = pick(rng, 1, 6);
    Tensor x = random_tensor({n, in}, rng);
    Tensor w = random_tensor({in, out}, rng);
    Tensor b = random_tensor({out}, rng);
    Tensor y = linear(x, w, b);
    Tensor go = random_tensor(y.shape(), rng);
    LinearGrads g = linear_backward(x, w, go);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t k = 0; k < in; ++k) acc += x.at(i, k) * w.at(k, o);
        CHECK(std::abs(y.at(i, o) - acc) <= 1e-12);
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < in; ++k) {
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o) acc += go.at(i, o) * w.at(k, o);
        CHECK(std::abs(g.input.at(i, k) - acc) <= 1e-12);
      }
    for (std::size_t k = 0; k < in; ++k)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x.at(i, k) * go.at(i, o);
        CHECK(std::abs(g.weights.at(k, o) - acc) <= 1e-12);
      }
  }
  CHECK(error_kind([] { linear(Tensor({2, 3}), Tensor({4, 2}), Tensor({2})); }) ==
        ErrorKind::dimension);
}

TEST_CASE("relu and its gradient") {
  Tensor x = Tensor::vector({-2.0, -0.0, 0.0, 0.5, 3.0});
  CHECK(relu(x) == Tensor::vector({0.0, 0.0, 0.0, 0.5, 3.0}));
  Tensor g = relu_backward(x, Tensor::vector({1, 1, 1, 1, 1}));
  CHECK(g == Tensor::vector({0, 0, 0, 1, 1}));
}

TEST_CASE("finite differences recover a known gradient") {
  // f(x) = sum sin(x_i) x_i^2
  std::mt19937_64 rng(105);
  Tensor x = random_tensor({7}, rng);
  auto f = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += std::sin(v) * v * v;
    return s;
  };
  Tensor g3 = finite_difference_grad(f, x);
  Tensor g5 = finite_difference_grad(f, x, 1e-3, FdStencil::five_point);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double exact = std::cos(x[i]) * x[i] * x[i] + 2.0 * x[i] * std::sin(x[i]);
    CHECK(g3[i] == doctest::Approx(exact).epsilon(1e-8));
    CHECK(g5[i] == doctest::Approx(exact).epsilon(1e-10));
  }
}
