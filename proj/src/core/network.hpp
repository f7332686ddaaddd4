#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kaf.hpp"
#include "tensor.hpp"

namespace kafshot {

enum class LayerKind { conv2d, maxpool2d, linear, relu, kaf, kaf2d, flatten };
enum class Activation { relu, kaf, kaf2d };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation act);
/// Throws a config error listing the valid names.
Activation parse_activation(std::string_view name);

struct LayerDescriptor {
  LayerKind kind = LayerKind::flatten;
  std::size_t in = 0;   // input channels (conv) or features (linear)
  std::size_t out = 0;  // output channels or features
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;  // max-pool window
};

enum class KafInit { random, elu };

struct KafSettings {
  int dictionary_size = 20;
  double bound = 3.0;
  std::optional<double> gamma;  // overrides 1 / (2 * spacing^2)
  bool per_channel = true;
  KafInit init = KafInit::random;
};

/// Declarative architecture. `input` is [C,H,W]; activation layers carry the
/// activation kind directly in their descriptor.
struct NetworkSpec {
  std::string name;
  Shape input;
  Activation activation = Activation::relu;
  KafSettings kaf;
  std::vector<LayerDescriptor> layers;
  std::size_t embedding_dim = 0;
};

/// Shapes before and after every layer for a batch of one, starting with
/// [1,C,H,W]. Throws a dimension error if consecutive extents do not compose.
std::vector<Shape> trace_shapes(const NetworkSpec& spec);

NetworkSpec mnist_siamese_spec(Activation act, const KafSettings& kaf = {});
NetworkSpec att_siamese_spec(Activation act, const KafSettings& kaf = {});
NetworkSpec matching_embedder_spec(Activation act, const KafSettings& kaf = {});
/// Looks up one of the three named architectures.
NetworkSpec named_spec(std::string_view name, Activation act, const KafSettings& kaf = {});

/// Parameters and gradients of one layer. Forward intermediates live in a
/// Trace owned by the caller so one parameter store can serve several
/// concurrent forward passes.
struct LayerState {
  LayerDescriptor desc;
  std::vector<Tensor> params;  // conv/linear: weights, bias
  std::vector<Tensor> grads;   // same shapes as params (alpha grad for kaf)
  std::optional<KafParams> kaf;
};

struct ParamSlot {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct ConstParamSlot {
  std::string name;
  const Tensor* value;
};

struct Trace {
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::size_t>> argmax;
  std::size_t batch = 0;
};

class Network {
 public:
  Network() = default;
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }

  /// He-normal weights, zero biases, KAF mixtures per KafSettings. Each layer
  /// draws from its own stream derived from (seed, layer index).
  void initialize(std::uint64_t seed);

  /// x is [N,C,H,W] (or [C,H,W] for one sample). Returns [N,embedding_dim].
  /// Records intermediates into `trace` when given.
  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients and returns the input gradient.
  Tensor backward(const Tensor& grad_output, const Trace& trace);

  void zero_grad();
  std::vector<ParamSlot> parameters();
  std::vector<ConstParamSlot> parameters() const;
  std::size_t parameter_count() const;

  std::vector<LayerState>& layers() noexcept { return layers_; }
  const std::vector<LayerState>& layers() const noexcept { return layers_; }

 private:
  NetworkSpec spec_;
  std::vector<LayerState> layers_;
};

/// Twin embedding network. Both branches run through the same LayerState
/// storage, so any update is seen by both.
class SiameseModel {
 public:
  struct Embeddings {
    Tensor e1;
    Tensor e2;
  };

  SiameseModel() = default;
  SiameseModel(NetworkSpec spec, std::uint64_t seed);
  explicit SiameseModel(Network net, std::uint64_t seed = 0);

  /// Embeds both inputs in one batched pass and keeps the trace for backward.
  Embeddings forward(const Tensor& x1, const Tensor& x2);
  /// Backpropagates branch gradients into the shared parameters. Requires a
  /// forward pass since the last invalidate().
  void backward(const Tensor& grad_e1, const Tensor& grad_e2);
  void invalidate() noexcept { trace_.reset(); }
  bool has_trace() const noexcept { return trace_.has_value(); }

  Tensor embed(const Tensor& x) const { return net_.forward(x); }

  Network& network() noexcept { return net_; }
  const Network& network() const noexcept { return net_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  Network net_;
  std::uint64_t seed_ = 0;
  std::optional<Trace> trace_;
  std::size_t batch_ = 0;
};

SiameseModel build_mnist_siamese(Activation act, std::uint64_t seed = 0,
                                 const KafSettings& kaf = {});
SiameseModel build_att_siamese(Activation act, std::uint64_t seed = 0,
                               const KafSettings& kaf = {});

}  // namespace kafshot
