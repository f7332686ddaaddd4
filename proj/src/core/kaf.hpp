#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace kafshot {

/// Kernel activation functions.
///
/// A KAF replaces a fixed nonlinearity with a learnable mixture of Gaussian
/// kernels centred on a fixed, evenly spaced dictionary:
///
///   g(s) = sum_i alpha_i * exp(-gamma * (s - d_i)^2)
///
/// Only the mixing coefficients alpha are trained. The two-dimensional
/// variant consumes channel pairs (2k, 2k+1) and mixes over the D x D grid
/// formed by the Cartesian product of the dictionary with itself, halving the
/// channel count. For inputs of rank >= 2 axis 1 is the channel axis; a
/// rank-1 input is a single channel.

enum class KafVariant { one_d, two_d };

struct Dictionary {
  std::vector<double> points;
  double spacing = 0.0;
  double gamma = 0.0;  // 1 / (2 * spacing^2)
};

/// D points evenly spaced on [-bound, bound]; D = 1 gives the single point 0.
Dictionary make_dictionary(int size, double bound);

class KafParams {
 public:
  /// `groups` is the number of alpha rows: the channel count (output channels
  /// for the 2-D variant) when per-channel, 1 when shared.
  KafParams(std::vector<double> dictionary, double gamma, KafVariant variant,
            std::size_t groups = 1);

  const std::vector<double>& dictionary() const noexcept { return dictionary_; }
  double gamma() const noexcept { return gamma_; }
  KafVariant variant() const noexcept { return variant_; }
  std::size_t dictionary_size() const noexcept { return dictionary_.size(); }
  /// Number of kernels per mixture: D for 1-D, D^2 for 2-D.
  std::size_t terms() const noexcept;
  std::size_t groups() const noexcept { return alpha_.dim(0); }
  bool per_channel() const noexcept { return groups() > 1; }

  Tensor& alpha() noexcept { return alpha_; }
  const Tensor& alpha() const noexcept { return alpha_; }
  /// Replaces alpha; the shape must not change.
  void set_alpha(Tensor alpha);

 private:
  std::vector<double> dictionary_;
  double gamma_;
  KafVariant variant_;
  Tensor alpha_;
};

struct KafGrads {
  Tensor alpha;
  Tensor input;
};

Tensor kaf_forward(const Tensor& s, const KafParams& p);
KafGrads kaf_backward(const Tensor& s, const Tensor& upstream, const KafParams& p);

Tensor kaf2d_forward(const Tensor& s, const KafParams& p);
KafGrads kaf2d_backward(const Tensor& s, const Tensor& upstream, const KafParams& p);

/// Gram matrix of the kernel over the dictionary (over the grid for 2-D).
Tensor kernel_gram(const KafParams& p);

/// Smallest eigenvalue of the Gram matrix. A non-negative value certifies
/// alpha^T K alpha >= 0 for every alpha.
double psd_check(const KafParams& p);

enum class AlphaInit { random, fit_target };

/// random: i.i.d. N(0, 0.3^2).
/// fit_target: ridge least squares (ridge 1e-4) so that g(d_j) ~= target(d_j);
/// every row receives the same fitted mixture. 1-D only.
Tensor init_alpha(const KafParams& p, AlphaInit mode,
                  const std::function<double(double)>& target, std::mt19937_64& rng);

/// Smooth ELU-shaped warm-start target.
double elu(double x);

}  // namespace kafshot
