#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "tensor.hpp"

using namespace kafshot;
using testutil::error_kind;

TEST_CASE("tensor construction and shape checks") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(2) == 4);
  for (double v : t.values()) CHECK(v == 0.0);

  CHECK(error_kind([] { Tensor({2, 0, 3}); }) == ErrorKind::dimension);
  CHECK(error_kind([] { Tensor({2, 2}, std::vector<double>(3)); }) == ErrorKind::dimension);
  CHECK(error_kind([&] { (void)t.dim(3); }) == ErrorKind::dimension);
  CHECK(shape_string({2, 3}) == "[2,3]");
}

TEST_CASE("reshape keeps row-major order") {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 5.0);
  CHECK(r.at(1, 0) == 2.0);
  CHECK(error_kind([&] { (void)t.reshaped({4, 2}); }) == ErrorKind::dimension);
}

TEST_CASE("4-d indexing matches the flat layout") {
  std::mt19937_64 rng(3);
  Tensor t = testutil::random_tensor({2, 3, 4, 5}, rng);
  std::size_t flat = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 5; ++w) CHECK(t.at(n, c, h, w) == t[flat++]);
}

TEST_CASE("slice, rows, concat and stack agree") {
  std::mt19937_64 rng(5);
  Tensor a = testutil::random_tensor({3, 2, 2}, rng);
  Tensor b = testutil::random_tensor({2, 2, 2}, rng);
  Tensor c = concat_rows(a, b);
  CHECK(c.shape() == Shape{5, 2, 2});
  CHECK(c.rows(0, 3) == a);
  CHECK(c.rows(3, 5) == b);
  CHECK(c.slice(4) == b.slice(1));

  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < 5; ++i) parts.push_back(c.slice(i));
  CHECK(stack(parts) == c);

  CHECK(error_kind([&] { (void)c.rows(2, 2); }) == ErrorKind::dimension);
  CHECK(error_kind([&] { (void)concat_rows(a, Tensor({1, 3, 2})); }) == ErrorKind::dimension);
}

TEST_CASE("axpy, dot and finiteness") {
  Tensor x = Tensor::vector({1, 2, 3});
  Tensor y = Tensor::vector({4, 5, 6});
  CHECK(dot(x, y) == 32.0);
  axpy(2.0, x, y);
  CHECK(y == Tensor::vector({6, 9, 12}));
  CHECK(y.all_finite());
  y[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(y.all_finite());
  Tensor short_y = Tensor::vector({1});
  CHECK(error_kind([&] { axpy(1.0, x, short_y); }) == ErrorKind::dimension);
}
