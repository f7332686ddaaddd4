#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace kafshot {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;  // zero padding on every spatial border
};

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Cross-correlation of input [N,C,H,W] with weights [F,C,kh,kw] plus bias [F].
/// Output extent per spatial axis is floor((H + 2p - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Conv2dGeometry geom = {});
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output, Conv2dGeometry geom = {});

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling. H and W must be divisible by `window`; ties go
/// to the first maximum in row-major order inside the window.
PoolResult maxpool2d(const Tensor& input, std::size_t window);
Tensor maxpool2d_backward(const Tensor& grad_output,
                          const std::vector<std::size_t>& argmax,
                          const Shape& input_shape);

struct LinearGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// input [N,I] x weights [I,O] + bias [O].
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
LinearGrads linear_backward(const Tensor& input, const Tensor& weights,
                            const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

using ScalarFunction = std::function<double(const Tensor&)>;

/// three_point: (f(x+h) - f(x-h)) / 2h, error O(h^2).
/// five_point: the fourth-order central stencil, which tolerates a larger h
/// and so loses less to cancellation.
enum class FdStencil { three_point, five_point };

/// Central-difference gradient of a scalar function, one element at a time.
Tensor finite_difference_grad(const ScalarFunction& f, const Tensor& x,
                              double h = 1e-5, FdStencil stencil = FdStencil::three_point);

}  // namespace kafshot
