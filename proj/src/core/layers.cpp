#include "layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "error.hpp"

namespace kafshot {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights, Conv2dGeometry geom) {
  require(input.rank() == 4, ErrorKind::dimension,
          "conv2d input must be rank 4 [N,C,H,W], got " + shape_string(input.shape()));
  require(weights.rank() == 4, ErrorKind::dimension,
          "conv2d weights must be rank 4 [F,C,kh,kw], got " + shape_string(weights.shape()));
  require(geom.stride > 0, ErrorKind::parameter, "conv2d stride must be positive");
  ConvDims d{};
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.f = weights.dim(0);
  d.kh = weights.dim(2);
  d.kw = weights.dim(3);
  require(weights.dim(1) == d.c, ErrorKind::dimension,
          "conv2d channel axis mismatch: input has " + std::to_string(d.c) +
              ", weights expect " + std::to_string(weights.dim(1)));
  require(d.h + 2 * geom.padding >= d.kh, ErrorKind::dimension,
          "conv2d height axis: input extent " + std::to_string(d.h) +
              " smaller than kernel " + std::to_string(d.kh));
  require(d.w + 2 * geom.padding >= d.kw, ErrorKind::dimension,
          "conv2d width axis: input extent " + std::to_string(d.w) +
              " smaller than kernel " + std::to_string(d.kw));
  d.oh = (d.h + 2 * geom.padding - d.kh) / geom.stride + 1;
  d.ow = (d.w + 2 * geom.padding - d.kw) / geom.stride + 1;
  return d;
}

// Unfolds one image into a [C*kh*kw, oh*ow] patch matrix.
void im2col(const double* image, const ConvDims& d, Conv2dGeometry g, double* cols) {
  const std::size_t plane = d.oh * d.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* chan = image + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        double* out = cols + row * plane;
        for (std::size_t oi = 0; oi < d.oh; ++oi) {
          const long y = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          for (std::size_t oj = 0; oj < d.ow; ++oj) {
            const long x = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = y >= 0 && y < static_cast<long>(d.h) && x >= 0 &&
                                x < static_cast<long>(d.w);
            out[oi * d.ow + oj] = inside ? chan[y * d.w + x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvDims& d, Conv2dGeometry g, double* image) {
  const std::size_t plane = d.oh * d.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    double* chan = image + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        const double* in = cols + row * plane;
        for (std::size_t oi = 0; oi < d.oh; ++oi) {
          const long y = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
          if (y < 0 || y >= static_cast<long>(d.h)) continue;
          for (std::size_t oj = 0; oj < d.ow; ++oj) {
            const long x = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
            if (x < 0 || x >= static_cast<long>(d.w)) continue;
            chan[y * d.w + x] += in[oi * d.ow + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input, weights, geom);
  require(bias.rank() == 1 && bias.dim(0) == d.f, ErrorKind::dimension,
          "conv2d bias axis 0 must equal filter count " + std::to_string(d.f));
  const std::size_t patch = d.c * d.kh * d.kw;
  const std::size_t plane = d.oh * d.ow;

  Tensor out({d.n, d.f, d.oh, d.ow});
  std::vector<double> cols(patch * plane);
  ConstRowMap wmat(weights.data(), d.f, patch);
  Eigen::Map<const Eigen::VectorXd> bvec(bias.data(), d.f);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(input.data() + n * d.c * d.h * d.w, d, geom, cols.data());
    RowMap omat(out.data() + n * d.f * plane, d.f, plane);
    omat.noalias() = wmat * ConstRowMap(cols.data(), patch, plane);
    omat.colwise() += bvec;
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output, Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input, weights, geom);
  require(grad_output.shape() == Shape{d.n, d.f, d.oh, d.ow}, ErrorKind::dimension,
          "conv2d upstream gradient has shape " + shape_string(grad_output.shape()));
  const std::size_t patch = d.c * d.kh * d.kw;
  const std::size_t plane = d.oh * d.ow;

  Conv2dGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({d.f})};
  std::vector<double> cols(patch * plane);
  std::vector<double> dcols(patch * plane);
  ConstRowMap wmat(weights.data(), d.f, patch);
  RowMap dw(g.weights.data(), d.f, patch);
  Eigen::Map<Eigen::VectorXd> db(g.bias.data(), d.f);
  for (std::size_t n = 0; n < d.n; ++n) {
    ConstRowMap go(grad_output.data() + n * d.f * plane, d.f, plane);
    im2col(input.data() + n * d.c * d.h * d.w, d, geom, cols.data());
    dw.noalias() += go * ConstRowMap(cols.data(), patch, plane).transpose();
    db += go.rowwise().sum();
    RowMap(dcols.data(), patch, plane).noalias() = wmat.transpose() * go;
    col2im(dcols.data(), d, geom, g.input.data() + n * d.c * d.h * d.w);
  }
  return g;
}

PoolResult maxpool2d(const Tensor& input, std::size_t window) {
  require(input.rank() == 4, ErrorKind::dimension,
          "maxpool2d input must be rank 4 [N,C,H,W], got " + shape_string(input.shape()));
  require(window > 0, ErrorKind::parameter, "maxpool2d window must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h % window == 0, ErrorKind::dimension,
          "maxpool2d height axis extent " + std::to_string(h) +
              " not divisible by window " + std::to_string(window));
  require(w % window == 0, ErrorKind::dimension,
          "maxpool2d width axis extent " + std::to_string(w) +
              " not divisible by window " + std::to_string(window));
  const std::size_t oh = h / window, ow = w / window;
  PoolResult r{Tensor({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj, ++o) {
        std::size_t best = base + (oi * window) * w + oj * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oi * window + i) * w + oj * window + j;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Tensor& grad_output,
                          const std::vector<std::size_t>& argmax,
                          const Shape& input_shape) {
  require(grad_output.size() == argmax.size(), ErrorKind::dimension,
          "maxpool2d upstream gradient does not match cached argmax");
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_output[i];
  return g;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(input.rank() == 2, ErrorKind::dimension,
          "linear input must be rank 2 [N,I], got " + shape_string(input.shape()));
  require(weights.rank() == 2, ErrorKind::dimension,
          "linear weights must be rank 2 [I,O], got " + shape_string(weights.shape()));
  const std::size_t n = input.dim(0), in = input.dim(1), outf = weights.dim(1);
  require(weights.dim(0) == in, ErrorKind::dimension,
          "linear inner axis mismatch: input has " + std::to_string(in) +
              ", weights expect " + std::to_string(weights.dim(0)));
  require(bias.rank() == 1 && bias.dim(0) == outf, ErrorKind::dimension,
          "linear bias axis 0 must equal output width " + std::to_string(outf));
  Tensor out({n, outf});
  RowMap o(out.data(), n, outf);
  o.noalias() = ConstRowMap(input.data(), n, in) * ConstRowMap(weights.data(), in, outf);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), outf);
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output) {
  const std::size_t n = input.dim(0), in = input.dim(1), outf = weights.dim(1);
  require(grad_output.shape() == Shape{n, outf}, ErrorKind::dimension,
          "linear upstream gradient has shape " + shape_string(grad_output.shape()));
  LinearGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({outf})};
  ConstRowMap x(input.data(), n, in);
  ConstRowMap w(weights.data(), in, outf);
  ConstRowMap go(grad_output.data(), n, outf);
  RowMap(g.input.data(), n, in).noalias() = go * w.transpose();
  RowMap(g.weights.data(), in, outf).noalias() = x.transpose() * go;
  Eigen::Map<Eigen::RowVectorXd>(g.bias.data(), outf) = go.colwise().sum();
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require(input.shape() == grad_output.shape(), ErrorKind::dimension,
          "relu upstream gradient has shape " + shape_string(grad_output.shape()));
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (input[i] <= 0.0) g[i] = 0.0;
  }
  return g;
}

Tensor finite_difference_grad(const ScalarFunction& f, const Tensor& x, double h,
                              FdStencil stencil) {
  require(h > 0.0, ErrorKind::parameter, "finite difference step must be positive");
  Tensor probe = x;
  Tensor grad = Tensor::zeros_like(x);
  auto at = [&](std::size_t i, double offset) {
    probe[i] = x[i] + offset;
    const double v = f(probe);
    probe[i] = x[i];
    require(std::isfinite(v), ErrorKind::numeric,
            "non-finite function value while probing element " + std::to_string(i));
    return v;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (stencil == FdStencil::three_point) {
      grad[i] = (at(i, h) - at(i, -h)) / (2.0 * h);
    } else {
      grad[i] = (8.0 * (at(i, h) - at(i, -h)) - (at(i, 2 * h) - at(i, -2 * h))) / (12.0 * h);
    }
  }
  return grad;
}

}  // namespace kafshot
