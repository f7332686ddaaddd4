#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "error.hpp"

namespace kafshot {

double embedding_distance(std::span<const double> e1, std::span<const double> e2) {
  require(e1.size() == e2.size(), ErrorKind::dimension,
          "embedding extents differ: " + std::to_string(e1.size()) + " vs " +
              std::to_string(e2.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const double d = e1[i] - e2[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double embedding_distance(const Tensor& e1, const Tensor& e2) {
  return embedding_distance(e1.values(), e2.values());
}

namespace {

// Loss and d(loss)/d(e1) for one pair; d/d(e2) is the negation.
double pair_loss(std::span<const double> e1, std::span<const double> e2, PairLabel y,
                 double margin, std::span<double> grad, double scale, double& dist) {
  dist = embedding_distance(e1, e2);
  if (y == PairLabel::similar) {
    for (std::size_t i = 0; i < e1.size(); ++i) grad[i] = scale * (e1[i] - e2[i]);
    return 0.5 * dist * dist;
  }
  const double gap = margin - dist;
  if (gap <= 0.0) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 0.0;
  }
  const double coeff = dist > 0.0 ? -gap / dist : 0.0;
  for (std::size_t i = 0; i < e1.size(); ++i) grad[i] = scale * coeff * (e1[i] - e2[i]);
  return 0.5 * gap * gap;
}

}  // namespace

ContrastiveResult contrastive_loss(const Tensor& e1, const Tensor& e2, PairLabel y,
                                   double margin) {
  require(margin > 0.0, ErrorKind::parameter, "contrastive margin must be positive");
  require(e1.shape() == e2.shape(), ErrorKind::dimension,
          "contrastive loss embeddings differ in shape");
  ContrastiveResult r{0.0, Tensor(e1.shape()), Tensor(e2.shape())};
  double dist = 0.0;
  r.loss = pair_loss(e1.values(), e2.values(), y, margin, r.grad_e1.values(), 1.0, dist);
  for (std::size_t i = 0; i < e1.size(); ++i) r.grad_e2[i] = -r.grad_e1[i];
  return r;
}

BatchContrastive contrastive_loss_batch(const Tensor& e1, const Tensor& e2,
                                        std::span<const PairLabel> labels, double margin) {
  require(margin > 0.0, ErrorKind::parameter, "contrastive margin must be positive");
  require(e1.rank() == 2 && e1.shape() == e2.shape(), ErrorKind::dimension,
          "batched embeddings must both be [B,E]");
  const std::size_t b = e1.dim(0), e = e1.dim(1);
  require(labels.size() == b, ErrorKind::dimension, "one label per pair required");
  BatchContrastive r{0.0, Tensor(e1.shape()), Tensor(e2.shape()), std::vector<double>(b)};
  const double scale = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto g1 = r.grad_e1.values().subspan(i * e, e);
    r.loss += pair_loss(e1.values().subspan(i * e, e), e2.values().subspan(i * e, e),
                        labels[i], margin, g1, scale, r.distances[i]);
    for (std::size_t k = 0; k < e; ++k) r.grad_e2[i * e + k] = -g1[k];
  }
  r.loss *= scale;
  return r;
}

double silhouette_score(const EmbeddingSet& es) {
  require(es.points.rank() == 2, ErrorKind::dimension, "silhouette points must be [N,E]");
  const std::size_t n = es.points.dim(0), e = es.points.dim(1);
  require(es.labels.size() == n, ErrorKind::dimension, "one label per point required");
  require(n >= 2, ErrorKind::metric, "silhouette needs at least two points");

  std::map<int, std::size_t> dense;
  for (int l : es.labels) dense.emplace(l, 0);
  require(dense.size() >= 2, ErrorKind::metric, "silhouette needs at least two clusters");
  std::size_t next = 0;
  for (auto& [label, id] : dense) id = next++;
  std::vector<std::size_t> cluster(n);
  std::vector<std::size_t> counts(dense.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = dense[es.labels[i]];
    ++counts[cluster[i]];
  }

  const auto pts = es.points.values();
  std::vector<double> sums(dense.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sums[cluster[j]] += embedding_distance(pts.subspan(i * e, e), pts.subspan(j * e, e));
    }
    const std::size_t own = cluster[i];
    if (counts[own] < 2) continue;
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

namespace {

struct Attention {
  std::vector<double> cosine;
  std::vector<double> weight;
  std::vector<double> support_norm;
  double query_norm = 0.0;
};

Attention attend(const Tensor& support, std::span<const int> labels, const Tensor& query,
                 std::size_t classes) {
  require(support.rank() == 2 && support.dim(0) > 0, ErrorKind::dimension,
          "support set must be a non-empty [S,E] tensor");
  const std::size_t s = support.dim(0), e = support.dim(1);
  require(query.size() == e, ErrorKind::dimension,
          "query extent " + std::to_string(query.size()) + " differs from support extent " +
              std::to_string(e));
  require(labels.size() == s, ErrorKind::dimension, "one label per support item required");
  for (int l : labels) {
    require(l >= 0 && static_cast<std::size_t>(l) < classes, ErrorKind::parameter,
            "support label " + std::to_string(l) + " outside [0, classes)");
  }
  Attention at;
  at.query_norm = std::sqrt(dot(query, query));
  require(at.query_norm > 0.0, ErrorKind::numeric, "query embedding has zero norm");
  at.cosine.resize(s);
  at.support_norm.resize(s);
  for (std::size_t i = 0; i < s; ++i) {
    double nn = 0.0, qd = 0.0;
    for (std::size_t k = 0; k < e; ++k) {
      const double v = support[i * e + k];
      nn += v * v;
      qd += v * query[k];
    }
    at.support_norm[i] = std::sqrt(nn);
    require(at.support_norm[i] > 0.0, ErrorKind::numeric,
            "support embedding " + std::to_string(i) + " has zero norm");
    at.cosine[i] = qd / (at.support_norm[i] * at.query_norm);
  }
  const double top = *std::max_element(at.cosine.begin(), at.cosine.end());
  at.weight.resize(s);
  double z = 0.0;
  for (std::size_t i = 0; i < s; ++i) z += at.weight[i] = std::exp(at.cosine[i] - top);
  for (double& w : at.weight) w /= z;
  return at;
}

}  // namespace

std::vector<double> matching_forward(const Tensor& support, std::span<const int> labels,
                                     const Tensor& query, std::size_t classes) {
  const Attention at = attend(support, labels, query, classes);
  std::vector<double> probs(classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) probs[labels[i]] += at.weight[i];
  return probs;
}

MatchingLoss matching_nll(const Tensor& support, std::span<const int> labels,
                          const Tensor& query, std::size_t classes, int target) {
  require(target >= 0 && static_cast<std::size_t>(target) < classes, ErrorKind::parameter,
          "target class outside [0, classes)");
  const Attention at = attend(support, labels, query, classes);
  const std::size_t s = support.dim(0), e = support.dim(1);
  MatchingLoss r;
  r.probabilities.assign(classes, 0.0);
  for (std::size_t i = 0; i < s; ++i) r.probabilities[labels[i]] += at.weight[i];
  const double p = r.probabilities[target];
  require(p > 0.0, ErrorKind::numeric, "target class has zero probability");
  r.loss = -std::log(p);

  r.grad_support = Tensor(support.shape());
  r.grad_query = Tensor(query.shape());
  for (std::size_t i = 0; i < s; ++i) {
    // dL/dcos_i = -a_i ([l_i = t] - p) / p
    const double match = labels[i] == target ? 1.0 : 0.0;
    const double dcos = -at.weight[i] * (match - p) / p;
    const double inv = 1.0 / (at.support_norm[i] * at.query_norm);
    const double c = at.cosine[i];
    for (std::size_t k = 0; k < e; ++k) {
      const double sv = support[i * e + k];
      const double qv = query[k];
      r.grad_query[k] += dcos * (sv * inv - c * qv / (at.query_norm * at.query_norm));
      r.grad_support[i * e + k] +=
          dcos * (qv * inv - c * sv / (at.support_norm[i] * at.support_norm[i]));
    }
  }
  return r;
}

}  // namespace kafshot
