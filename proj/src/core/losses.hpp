#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace kafshot {

/// 0 = similar pair, 1 = dissimilar pair; (1 - Y) gates the attraction term.
enum class PairLabel : int { similar = 0, dissimilar = 1 };

double embedding_distance(std::span<const double> e1, std::span<const double> e2);
double embedding_distance(const Tensor& e1, const Tensor& e2);

struct ContrastiveResult {
  double loss = 0.0;
  Tensor grad_e1;
  Tensor grad_e2;
};

/// (1-Y) * D^2 / 2 + Y * max(0, m - D)^2 / 2 with D = ||e1 - e2||.
/// At D = 0 the dissimilar-branch gradient is taken as zero.
ContrastiveResult contrastive_loss(const Tensor& e1, const Tensor& e2, PairLabel y,
                                   double margin);

struct BatchContrastive {
  double loss = 0.0;  // mean over pairs
  Tensor grad_e1;     // [B,E], already scaled by 1/B
  Tensor grad_e2;
  std::vector<double> distances;
};

BatchContrastive contrastive_loss_batch(const Tensor& e1, const Tensor& e2,
                                        std::span<const PairLabel> labels, double margin);

struct EmbeddingSet {
  Tensor points;  // [N,E]
  std::vector<int> labels;
};

/// Mean silhouette over all points with Euclidean distance. Points in
/// singleton clusters contribute 0, as does the degenerate a = b = 0 case.
double silhouette_score(const EmbeddingSet& es);

/// Cosine-attention classifier over a labelled support set.
/// support is [S,E]; labels are episode-local class ids in [0, classes).
std::vector<double> matching_forward(const Tensor& support, std::span<const int> labels,
                                     const Tensor& query, std::size_t classes);

struct MatchingLoss {
  double loss = 0.0;  // -log p(target)
  std::vector<double> probabilities;
  Tensor grad_support;
  Tensor grad_query;
};

MatchingLoss matching_nll(const Tensor& support, std::span<const int> labels,
                          const Tensor& query, std::size_t classes, int target);

}  // namespace kafshot
