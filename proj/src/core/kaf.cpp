#include "kaf.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace kafshot {
namespace {

constexpr double kAlphaInitStd = 0.3;
constexpr double kFitRidge = 1e-4;

// Channel layout of an activation tensor: `outer` leading blocks, each holding
// `channels` contiguous runs of `inner` elements.
struct ChannelLayout {
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t inner = 1;
};

ChannelLayout layout_of(const Tensor& s) {
  ChannelLayout l;
  if (s.rank() <= 1) {
    l.inner = s.size();
    return l;
  }
  l.outer = s.dim(0);
  l.channels = s.dim(1);
  l.inner = s.size() / (l.outer * l.channels);
  return l;
}

std::size_t alpha_row(const KafParams& p, std::size_t channel) {
  return p.per_channel() ? channel : 0;
}

void check_groups(const KafParams& p, std::size_t channels, const char* what) {
  require(!p.per_channel() || p.groups() == channels, ErrorKind::dimension,
          std::string(what) + ": per-channel alpha has " + std::to_string(p.groups()) +
              " rows but the channel axis has extent " + std::to_string(channels));
}

inline double gauss(double gamma, double diff) { return std::exp(-gamma * diff * diff); }

// exp(-gamma (x - d_i)^2) for all i. The dictionary is evenly spaced, so the
// ratio between neighbouring values is itself geometric with factor
// q = exp(-2 gamma step^2). Walking outwards from the nearest centre keeps
// every factor <= 1; terms underflow to 0 instead of overflowing.
class KernelRow {
 public:
  explicit KernelRow(const KafParams& p)
      : dict_(p.dictionary()),
        gamma_(p.gamma()),
        step_(dict_.size() > 1 ? dict_[1] - dict_[0] : 0.0),
        q_(std::exp(-2.0 * gamma_ * step_ * step_)) {}

  void operator()(double x, double* out) const {
    const std::size_t D = dict_.size();
    if (D == 1) {
      out[0] = gauss(gamma_, x - dict_[0]);
      return;
    }
    const double pos = std::round((x - dict_[0]) / step_);
    const std::size_t c = pos <= 0.0 ? 0 : std::min(D - 1, static_cast<std::size_t>(pos));
    const double diff = x - dict_[c];
    out[c] = gauss(gamma_, diff);
    const double g2 = gamma_ * step_ * step_;
    const double up = std::exp(2.0 * gamma_ * step_ * diff - g2);
    double r = up;
    for (std::size_t i = c + 1; i < D; ++i, r *= q_) out[i] = out[i - 1] * r;
    // the downward ratio exp(-2 gamma step diff - gamma step^2) is q / up
    r = q_ / up;
    for (std::size_t i = c; i-- > 0; r *= q_) out[i] = out[i + 1] * r;
  }

 private:
  const std::vector<double>& dict_;
  double gamma_;
  double step_;
  double q_;
};

}  // namespace

Dictionary make_dictionary(int size, double bound) {
  require(size >= 1, ErrorKind::parameter,
          "dictionary size must be positive, got " + std::to_string(size));
  require(bound > 0.0 && std::isfinite(bound), ErrorKind::parameter,
          "dictionary bound must be positive");
  Dictionary d;
  // a lone centre sits at zero and takes the whole range as its spacing
  d.spacing = size == 1 ? 2.0 * bound : 2.0 * bound / (size - 1);
  d.points.resize(size);
  for (int i = 0; i < size; ++i) d.points[i] = -bound + i * d.spacing;
  // exact symmetry about zero
  for (int i = 0; i < size / 2; ++i) d.points[size - 1 - i] = -d.points[i];
  if (size % 2 == 1) d.points[size / 2] = 0.0;
  d.gamma = 1.0 / (2.0 * d.spacing * d.spacing);
  return d;
}

KafParams::KafParams(std::vector<double> dictionary, double gamma, KafVariant variant,
                     std::size_t groups)
    : dictionary_(std::move(dictionary)), gamma_(gamma), variant_(variant) {
  require(!dictionary_.empty(), ErrorKind::parameter, "dictionary must not be empty");
  require(gamma_ > 0.0 && std::isfinite(gamma_), ErrorKind::parameter,
          "kernel bandwidth must be positive");
  require(groups > 0, ErrorKind::parameter, "alpha group count must be positive");
  if (dictionary_.size() >= 2) {
    const double step = dictionary_[1] - dictionary_[0];
    require(step > 0.0, ErrorKind::parameter, "dictionary must be strictly increasing");
    for (std::size_t i = 1; i < dictionary_.size(); ++i) {
      const double di = dictionary_[i] - dictionary_[i - 1];
      require(di > 0.0 && std::abs(di - step) <= 1e-9 * std::max(1.0, std::abs(step)),
              ErrorKind::parameter, "dictionary must be evenly spaced");
    }
  }
  alpha_ = Tensor({groups, terms()});
}

std::size_t KafParams::terms() const noexcept {
  return variant_ == KafVariant::one_d ? dictionary_.size()
                                       : dictionary_.size() * dictionary_.size();
}

void KafParams::set_alpha(Tensor alpha) {
  require(alpha.shape() == alpha_.shape(), ErrorKind::dimension,
          "alpha shape " + shape_string(alpha.shape()) + " differs from " +
              shape_string(alpha_.shape()));
  alpha_ = std::move(alpha);
}

Tensor kaf_forward(const Tensor& s, const KafParams& p) {
  require(p.variant() == KafVariant::one_d, ErrorKind::parameter,
          "kaf_forward needs 1-D parameters");
  const ChannelLayout l = layout_of(s);
  check_groups(p, l.channels, "kaf");
  const auto& dict = p.dictionary();
  const std::size_t D = dict.size();
  const KernelRow kernels(p);
  std::vector<double> kv(D);
  Tensor out(s.shape());
  std::size_t e = 0;
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const double* a = p.alpha().data() + alpha_row(p, c) * D;
      for (std::size_t k = 0; k < l.inner; ++k, ++e) {
        kernels(s[e], kv.data());
        double g = 0.0;
        for (std::size_t i = 0; i < D; ++i) g += a[i] * kv[i];
        out[e] = g;
      }
    }
  }
  return out;
}

KafGrads kaf_backward(const Tensor& s, const Tensor& upstream, const KafParams& p) {
  require(p.variant() == KafVariant::one_d, ErrorKind::parameter,
          "kaf_backward needs 1-D parameters");
  require(s.shape() == upstream.shape(), ErrorKind::dimension,
          "kaf upstream gradient has shape " + shape_string(upstream.shape()) +
              ", input has " + shape_string(s.shape()));
  const ChannelLayout l = layout_of(s);
  check_groups(p, l.channels, "kaf");
  const auto& dict = p.dictionary();
  const std::size_t D = dict.size();
  const double gamma = p.gamma();
  const KernelRow kernels(p);
  std::vector<double> kv(D);
  KafGrads g{Tensor::zeros_like(p.alpha()), Tensor(s.shape())};
  std::size_t e = 0;
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t row = alpha_row(p, c);
      const double* a = p.alpha().data() + row * D;
      double* ga = g.alpha.data() + row * D;
      for (std::size_t k = 0; k < l.inner; ++k, ++e) {
        const double x = s[e];
        const double up = upstream[e];
        kernels(x, kv.data());
        double ds = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
          ga[i] += up * kv[i];
          ds += a[i] * (x - dict[i]) * kv[i];
        }
        g.input[e] = -2.0 * gamma * up * ds;
      }
    }
  }
  return g;
}

namespace {

struct PairLayout {
  std::size_t outer, in_channels, out_channels, inner;
};

PairLayout pair_layout(const Tensor& s) {
  require(s.rank() >= 2, ErrorKind::dimension,
          "kaf2d input must have a channel axis, got " + shape_string(s.shape()));
  const std::size_t c = s.dim(1);
  require(c % 2 == 0, ErrorKind::dimension,
          "kaf2d channel axis extent must be even, got " + std::to_string(c));
  return {s.dim(0), c, c / 2, s.size() / (s.dim(0) * c)};
}

Shape halved(const Shape& in) {
  Shape out = in;
  out[1] /= 2;
  return out;
}

}  // namespace

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Kernel rows of both halves of output channel c, gathered over the batch:
// row r of k1/k2 belongs to input element (o, k) with r = o * inner + k.
struct PairKernels {
  RowMatrix k1, k2;
};

PairKernels pair_kernels(const Tensor& s, const PairLayout& l, std::size_t c,
                         const KernelRow& kernels, std::size_t D) {
  PairKernels pk{RowMatrix(l.outer * l.inner, D), RowMatrix(l.outer * l.inner, D)};
  for (std::size_t o = 0; o < l.outer; ++o) {
    const double* x1 = s.data() + (o * l.in_channels + 2 * c) * l.inner;
    const double* x2 = x1 + l.inner;
    for (std::size_t k = 0; k < l.inner; ++k) {
      const auto r = static_cast<Eigen::Index>(o * l.inner + k);
      kernels(x1[k], pk.k1.row(r).data());
      kernels(x2[k], pk.k2.row(r).data());
    }
  }
  return pk;
}

}  // namespace

Tensor kaf2d_forward(const Tensor& s, const KafParams& p) {
  require(p.variant() == KafVariant::two_d, ErrorKind::parameter,
          "kaf2d_forward needs 2-D parameters");
  const PairLayout l = pair_layout(s);
  check_groups(p, l.out_channels, "kaf2d");
  const std::size_t D = p.dictionary_size();
  const auto Di = static_cast<Eigen::Index>(D);
  const KernelRow kernels(p);
  Tensor out(halved(s.shape()));
  for (std::size_t c = 0; c < l.out_channels; ++c) {
    // g = k1^T A k2 for every element of the channel at once
    Eigen::Map<const RowMatrix> a(p.alpha().data() + alpha_row(p, c) * D * D, Di, Di);
    const PairKernels pk = pair_kernels(s, l, c, kernels, D);
    const Eigen::VectorXd g = (pk.k1 * a).cwiseProduct(pk.k2).rowwise().sum();
    for (std::size_t o = 0; o < l.outer; ++o)
      std::copy_n(g.data() + o * l.inner, l.inner,
                  out.data() + (o * l.out_channels + c) * l.inner);
  }
  return out;
}

KafGrads kaf2d_backward(const Tensor& s, const Tensor& upstream, const KafParams& p) {
  require(p.variant() == KafVariant::two_d, ErrorKind::parameter,
          "kaf2d_backward needs 2-D parameters");
  const PairLayout l = pair_layout(s);
  check_groups(p, l.out_channels, "kaf2d");
  require(upstream.shape() == halved(s.shape()), ErrorKind::dimension,
          "kaf2d upstream gradient has shape " + shape_string(upstream.shape()));
  const auto& dict = p.dictionary();
  const std::size_t D = dict.size();
  const auto Di = static_cast<Eigen::Index>(D);
  const double gamma = p.gamma();
  const KernelRow kernels(p);
  KafGrads g{Tensor::zeros_like(p.alpha()), Tensor(s.shape())};
  for (std::size_t c = 0; c < l.out_channels; ++c) {
    const std::size_t row = alpha_row(p, c);
    Eigen::Map<const RowMatrix> a(p.alpha().data() + row * D * D, Di, Di);
    Eigen::Map<RowMatrix> ga(g.alpha.data() + row * D * D, Di, Di);
    const PairKernels pk = pair_kernels(s, l, c, kernels, D);
    const auto rows = static_cast<Eigen::Index>(l.outer * l.inner);
    Eigen::VectorXd up(rows), x1(rows), x2(rows);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t k = 0; k < l.inner; ++k) {
        const std::size_t r = o * l.inner + k;
        const std::size_t in = (o * l.in_channels + 2 * c) * l.inner + k;
        up[r] = upstream[(o * l.out_channels + c) * l.inner + k];
        x1[r] = s[in];
        x2[r] = s[in + l.inner];
      }
    // dg/dalpha_ij = k1_i k2_j; dg/dx1 = (dk1)^T (A k2); dg/dx2 = (A^T k1)^T dk2
    ga.noalias() += pk.k1.transpose() * (pk.k2.array().colwise() * up.array()).matrix();
    const RowMatrix u = pk.k2 * a.transpose();
    const RowMatrix v = pk.k1 * a;
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t k = 0; k < l.inner; ++k) {
        const std::size_t r = o * l.inner + k;
        const double* k1 = pk.k1.row(r).data();
        const double* k2 = pk.k2.row(r).data();
        const double* ur = u.row(r).data();
        const double* vr = v.row(r).data();
        double d1 = 0.0, d2 = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
          d1 += (x1[r] - dict[i]) * k1[i] * ur[i];
          d2 += (x2[r] - dict[i]) * k2[i] * vr[i];
        }
        const std::size_t in = (o * l.in_channels + 2 * c) * l.inner + k;
        g.input[in] = -2.0 * gamma * up[r] * d1;
        g.input[in + l.inner] = -2.0 * gamma * up[r] * d2;
      }
  }
  return g;
}

Tensor kernel_gram(const KafParams& p) {
  const auto& dict = p.dictionary();
  const std::size_t D = dict.size();
  if (p.variant() == KafVariant::one_d) {
    Tensor k({D, D});
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) k.at(i, j) = gauss(p.gamma(), dict[i] - dict[j]);
    return k;
  }
  const std::size_t M = D * D;
  Tensor k({M, M});
  for (std::size_t a = 0; a < M; ++a) {
    for (std::size_t b = 0; b < M; ++b) {
      const double dx = dict[a / D] - dict[b / D];
      const double dy = dict[a % D] - dict[b % D];
      k.at(a, b) = std::exp(-p.gamma() * (dx * dx + dy * dy));
    }
  }
  return k;
}

double psd_check(const KafParams& p) {
  const Tensor k = kernel_gram(p);
  const auto n = static_cast<Eigen::Index>(k.dim(0));
  Eigen::Map<const Eigen::MatrixXd> km(k.data(), n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(km, Eigen::EigenvaluesOnly);
  require(solver.info() == Eigen::Success, ErrorKind::numeric,
          "Gram matrix eigen-decomposition did not converge");
  return solver.eigenvalues().minCoeff();
}

Tensor init_alpha(const KafParams& p, AlphaInit mode,
                  const std::function<double(double)>& target, std::mt19937_64& rng) {
  Tensor alpha = Tensor::zeros_like(p.alpha());
  if (mode == AlphaInit::random) {
    std::normal_distribution<double> normal(0.0, kAlphaInitStd);
    for (double& v : alpha.values()) v = normal(rng);
    return alpha;
  }
  require(static_cast<bool>(target), ErrorKind::parameter,
          "fit_target initialisation needs a target function");
  require(p.variant() == KafVariant::one_d, ErrorKind::parameter,
          "fit_target initialisation is only defined for the 1-D kernel");
  const auto& dict = p.dictionary();
  const auto D = static_cast<Eigen::Index>(dict.size());
  Eigen::MatrixXd k(D, D);
  Eigen::VectorXd t(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    t(i) = target(dict[i]);
    for (Eigen::Index j = 0; j < D; ++j) k(i, j) = gauss(p.gamma(), dict[i] - dict[j]);
  }
  const Eigen::MatrixXd normal = k.transpose() * k + kFitRidge * Eigen::MatrixXd::Identity(D, D);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive(), ErrorKind::numeric,
          "ridge system for alpha fit is singular");
  const Eigen::VectorXd solved = ldlt.solve(k.transpose() * t);
  require(solved.allFinite(), ErrorKind::numeric, "alpha fit produced non-finite values");
  for (std::size_t r = 0; r < alpha.dim(0); ++r)
    for (Eigen::Index i = 0; i < D; ++i) alpha.at(r, static_cast<std::size_t>(i)) = solved(i);
  return alpha;
}

double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }

}  // namespace kafshot
