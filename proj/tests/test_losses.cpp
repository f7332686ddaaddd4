#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "layers.hpp"
#include "losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kafshot;
using testutil::error_kind;
using testutil::pick;
using testutil::random_tensor;

TEST_CASE("contrastive loss hand values") {
  Tensor a = Tensor::vector({0.0, 0.0});
  Tensor b = Tensor::vector({3.0, 4.0});
  CHECK(embedding_distance(a, b) == 5.0);

  ContrastiveResult sim = contrastive_loss(a, b, PairLabel::similar, 2.0);
  CHECK(sim.loss == 12.5);
  CHECK(sim.grad_e1 == Tensor::vector({-3.0, -4.0}));
  CHECK(sim.grad_e2 == Tensor::vector({3.0, 4.0}));

  // beyond the margin a dissimilar pair costs nothing
  ContrastiveResult far = contrastive_loss(a, b, PairLabel::dissimilar, 2.0);
  CHECK(far.loss == 0.0);
  CHECK(far.grad_e1 == Tensor::vector({0.0, 0.0}));

  Tensor c = Tensor::vector({0.6, 0.8});  // distance 1
  ContrastiveResult near = contrastive_loss(a, c, PairLabel::dissimilar, 2.0);
  CHECK(near.loss == doctest::Approx(0.5));
  // d/de2 of (m - D)^2 / 2 = -(m - D) * (e2 - e1) / D
  CHECK(near.grad_e2[0] == doctest::Approx(-0.6));
  CHECK(near.grad_e2[1] == doctest::Approx(-0.8));

  ContrastiveResult same = contrastive_loss(a, a, PairLabel::dissimilar, 2.0);
  CHECK(same.loss == 2.0);
  CHECK(same.grad_e1 == Tensor::vector({0.0, 0.0}));
}

TEST_CASE("batch contrastive loss is the mean of per-pair losses") {
  std::mt19937_64 rng(301);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = pick(rng, 1, 6), e = pick(rng, 1, 4);
    Tensor e1 = random_tensor({b, e}, rng), e2 = random_tensor({b, e}, rng);
    std::vector<PairLabel> y;
    for (std::size_t i = 0; i < b; ++i)
      y.push_back(pick(rng, 0, 1) ? PairLabel::dissimilar : PairLabel::similar);
    BatchContrastive bc = contrastive_loss_batch(e1, e2, y, 2.0);
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      ContrastiveResult r = contrastive_loss(e1.slice(i), e2.slice(i), y[i], 2.0);
      mean += r.loss / b;
      CHECK(bc.distances[i] == doctest::Approx(embedding_distance(e1.slice(i), e2.slice(i))));
      for (std::size_t k = 0; k < e; ++k)
        CHECK(bc.grad_e1.at(i, k) == doctest::Approx(r.grad_e1[k] / b).epsilon(1e-12));
    }
    CHECK(bc.loss == doctest::Approx(mean).epsilon(1e-12));
  }
  CHECK(error_kind([] {
          std::vector<PairLabel> y(1);
          contrastive_loss_batch(Tensor({2, 2}), Tensor({2, 2}), y, 2.0);
        }) == ErrorKind::dimension);
}

TEST_CASE("silhouette hand value") {
  // clusters {0, 1} and {5, 6}: (9/11 + 7/9) / 2
  EmbeddingSet es{Tensor({4, 1}, {0, 1, 5, 6}), {0, 0, 1, 1}};
  CHECK(silhouette_score(es) == doctest::Approx(79.0 / 99.0).epsilon(1e-14));
}

TEST_CASE("silhouette matches the definitional O(N^2) oracle") {
  std::mt19937_64 rng(302);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = pick(rng, 3, 25), e = pick(rng, 1, 5);
    const int k = static_cast<int>(pick(rng, 2, 5));
    Tensor x = random_tensor({n, e}, rng);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k) * 7 - 3;
    std::shuffle(labels.begin(), labels.end(), rng);
    if (std::count(labels.begin(), labels.end(), labels[0]) == static_cast<long>(n)) continue;
    worst = std::max(worst, std::abs(silhouette_score({x, labels}) - oracle::silhouette(x, labels)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("silhouette edge cases") {
  // a singleton contributes 0; coincident points give a = b = 0
  EmbeddingSet single{Tensor({3, 1}, {0, 0.1, 9}), {0, 0, 1}};
  CHECK(silhouette_score(single) == doctest::Approx(oracle::silhouette(single.points, single.labels)));
  EmbeddingSet flat{Tensor({4, 2}), {0, 0, 1, 1}};
  CHECK(silhouette_score(flat) == 0.0);
  CHECK(error_kind([] { silhouette_score({Tensor({3, 2}), {1, 1, 1}}); }) == ErrorKind::metric);
  CHECK(error_kind([] { silhouette_score({Tensor({1, 2}), {1}}); }) == ErrorKind::metric);
  CHECK(error_kind([] { silhouette_score({Tensor({3, 2}), {1, 2}}); }) == ErrorKind::dimension);
}

TEST_CASE("silhouette is invariant to relabelling, translation and scale") {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({12, 3}, rng);
    std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    const double base = silhouette_score({x, labels});
    CHECK(base >= -1.0);
    CHECK(base <= 1.0);
    Tensor moved = x;
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t k = 0; k < 3; ++k) moved.at(i, k) = 3.5 * x.at(i, k) + k;
    std::vector<int> renamed;
    for (int l : labels) renamed.push_back(40 - l);
    CHECK(silhouette_score({moved, renamed}) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("matching head matches the direct softmax-attention oracle") {
  std::mt19937_64 rng(304);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t ways = pick(rng, 2, 6), shots = pick(rng, 1, 3), e = pick(rng, 1, 8);
    Tensor support = random_tensor({ways * shots, e}, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < ways * shots; ++i) labels.push_back(static_cast<int>(i % ways));
    Tensor query = random_tensor({e}, rng);
    const auto p = matching_forward(support, labels, query, ways);
    const auto o = oracle::attention(support, labels, query, ways);
    double sum = 0.0;
    for (std::size_t c = 0; c < ways; ++c) {
      worst = std::max(worst, std::abs(p[c] - o[c]));
      sum += p[c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    const int target = static_cast<int>(pick(rng, 0, ways - 1));
    MatchingLoss ml = matching_nll(support, labels, query, ways, target);
    CHECK(ml.loss == doctest::Approx(-std::log(o[target])).epsilon(1e-12));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("matching head is scale invariant and rejects bad input") {
  std::mt19937_64 rng(305);
  Tensor support = random_tensor({4, 3}, rng);
  std::vector<int> labels{0, 1, 2, 3};
  Tensor q = random_tensor({3}, rng);
  Tensor q2 = q;
  for (double& v : q2.values()) v *= 17.0;
  const auto a = matching_forward(support, labels, q, 4);
  const auto b = matching_forward(support, labels, q2, 4);
  for (int c = 0; c < 4; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-13));

  CHECK(error_kind([&] { matching_forward(support, labels, Tensor({3}), 4); }) ==
        ErrorKind::numeric);
  CHECK(error_kind([&] { matching_forward(support, labels, Tensor({2}), 4); }) ==
        ErrorKind::dimension);
  std::vector<int> bad{0, 1, 2, 4};
  CHECK(error_kind([&] { matching_forward(support, bad, q, 4); }) == ErrorKind::parameter);
  CHECK(error_kind([&] { matching_nll(support, labels, q, 4, 4); }) == ErrorKind::parameter);
}

TEST_CASE("matching NLL gradient agrees with finite differences") {
  std::mt19937_64 rng(306);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor support = random_tensor({6, 4}, rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2};
    Tensor query = random_tensor({4}, rng);
    MatchingLoss ml = matching_nll(support, labels, query, 3, 1);
    Tensor ns = finite_difference_grad(
        [&](const Tensor& s) { return matching_nll(s, labels, query, 3, 1).loss; }, support, 1e-3,
        FdStencil::five_point);
    Tensor nq = finite_difference_grad(
        [&](const Tensor& q) { return matching_nll(support, labels, q, 3, 1).loss; }, query, 1e-3,
        FdStencil::five_point);
    for (std::size_t i = 0; i < ns.size(); ++i)
      CHECK(ml.grad_support[i] == doctest::Approx(ns[i]).epsilon(1e-6).scale(1e-3));
    for (std::size_t i = 0; i < nq.size(); ++i)
      CHECK(ml.grad_query[i] == doctest::Approx(nq[i]).epsilon(1e-6).scale(1e-3));
  }
}
