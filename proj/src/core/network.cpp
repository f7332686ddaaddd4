#include "network.hpp"

#include <cmath>

#include "error.hpp"
#include "layers.hpp"
#include "rng.hpp"

namespace kafshot {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::kaf: return "kaf";
    case LayerKind::kaf2d: return "kaf2d";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::kaf: return "kaf";
    case Activation::kaf2d: return "kaf2d";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "kaf") return Activation::kaf;
  if (name == "kaf2d") return Activation::kaf2d;
  fail(ErrorKind::config,
       "unknown activation '" + std::string(name) + "' (valid: relu, kaf, kaf2d)");
}

namespace {

LayerDescriptor conv(std::size_t in, std::size_t out, std::size_t k, std::size_t pad = 0) {
  LayerDescriptor d;
  d.kind = LayerKind::conv2d;
  d.in = in;
  d.out = out;
  d.kernel = k;
  d.padding = pad;
  return d;
}

LayerDescriptor pool(std::size_t window) {
  LayerDescriptor d;
  d.kind = LayerKind::maxpool2d;
  d.window = window;
  return d;
}

LayerDescriptor dense(std::size_t in, std::size_t out) {
  LayerDescriptor d;
  d.kind = LayerKind::linear;
  d.in = in;
  d.out = out;
  return d;
}

LayerDescriptor flatten() { return LayerDescriptor{}; }

// Appends an activation over `width` channels and returns the width after it.
std::size_t activate(NetworkSpec& spec, std::size_t width) {
  LayerDescriptor d;
  d.in = width;
  d.out = width;
  switch (spec.activation) {
    case Activation::relu: d.kind = LayerKind::relu; break;
    case Activation::kaf: d.kind = LayerKind::kaf; break;
    case Activation::kaf2d:
      d.kind = LayerKind::kaf2d;
      d.out = width / 2;
      break;
  }
  spec.layers.push_back(d);
  return d.out;
}

std::string layer_context(std::size_t i, const LayerDescriptor& d) {
  return "layer " + std::to_string(i) + " (" + std::string(to_string(d.kind)) + ")";
}

}  // namespace

std::vector<Shape> trace_shapes(const NetworkSpec& spec) {
  require(spec.input.size() == 3, ErrorKind::dimension,
          "network input must be [C,H,W], got " + shape_string(spec.input));
  std::vector<Shape> shapes;
  Shape cur{1, spec.input[0], spec.input[1], spec.input[2]};
  shapes.push_back(cur);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& d = spec.layers[i];
    const std::string ctx = layer_context(i, d);
    switch (d.kind) {
      case LayerKind::conv2d: {
        require(cur.size() == 4 && cur[1] == d.in, ErrorKind::dimension,
                ctx + ": channel axis expects " + std::to_string(d.in) + ", got " +
                    shape_string(cur));
        require(d.stride > 0 && d.kernel > 0, ErrorKind::parameter, ctx + ": bad geometry");
        for (int ax : {2, 3}) {
          require(cur[ax] + 2 * d.padding >= d.kernel, ErrorKind::dimension,
                  ctx + ": spatial axis " + std::to_string(ax) + " smaller than kernel");
          cur[ax] = (cur[ax] + 2 * d.padding - d.kernel) / d.stride + 1;
        }
        cur[1] = d.out;
        break;
      }
      case LayerKind::maxpool2d:
        require(cur.size() == 4 && d.window > 0, ErrorKind::dimension, ctx + ": needs [N,C,H,W]");
        for (int ax : {2, 3}) {
          require(cur[ax] % d.window == 0, ErrorKind::dimension,
                  ctx + ": spatial axis " + std::to_string(ax) + " extent " +
                      std::to_string(cur[ax]) + " not divisible by window " +
                      std::to_string(d.window));
          cur[ax] /= d.window;
        }
        break;
      case LayerKind::flatten:
        cur = Shape{1, shape_product(cur)};
        break;
      case LayerKind::linear:
        require(cur.size() == 2 && cur[1] == d.in, ErrorKind::dimension,
                ctx + ": feature axis expects " + std::to_string(d.in) + ", got " +
                    shape_string(cur));
        cur[1] = d.out;
        break;
      case LayerKind::relu:
      case LayerKind::kaf:
        require(cur.size() >= 2 && cur[1] == d.in, ErrorKind::dimension,
                ctx + ": channel axis expects " + std::to_string(d.in) + ", got " +
                    shape_string(cur));
        break;
      case LayerKind::kaf2d:
        require(cur.size() >= 2 && cur[1] == d.in && d.in % 2 == 0 && d.out * 2 == d.in,
                ErrorKind::dimension,
                ctx + ": needs an even channel axis of " + std::to_string(d.in) + ", got " +
                    shape_string(cur));
        cur[1] = d.out;
        break;
    }
    shapes.push_back(cur);
  }
  require(cur.size() == 2 && cur[1] == spec.embedding_dim, ErrorKind::dimension,
          "network output " + shape_string(cur) + " does not match embedding_dim " +
              std::to_string(spec.embedding_dim));
  return shapes;
}

NetworkSpec mnist_siamese_spec(Activation act, const KafSettings& kaf) {
  NetworkSpec s;
  s.name = "mnist";
  s.input = {1, 28, 28};
  s.activation = act;
  s.kaf = kaf;
  s.embedding_dim = 2;
  // convolutions are listed without an activation; only the 500-unit layer has one
  s.layers = {conv(1, 20, 5), pool(2), conv(20, 50, 5), pool(2), flatten(), dense(800, 500)};
  const std::size_t width = activate(s, 500);
  s.layers.push_back(dense(width, 2));
  return s;
}

NetworkSpec att_siamese_spec(Activation act, const KafSettings& kaf) {
  NetworkSpec s;
  s.name = "att";
  s.input = {1, 100, 100};
  s.activation = act;
  s.kaf = kaf;
  s.embedding_dim = 5;
  // same-size 3x3 convolutions and 1x1 pooling keep a 100x100x8 flatten
  std::size_t c = 1;
  for (std::size_t out : {4, 8, 8}) {
    s.layers.push_back(conv(c, out, 3, 1));
    c = activate(s, out);
    s.layers.push_back(pool(1));
  }
  s.layers.push_back(flatten());
  s.layers.push_back(dense(c * 100 * 100, 500));
  std::size_t w = activate(s, 500);
  s.layers.push_back(dense(w, 250));
  w = activate(s, 250);
  s.layers.push_back(dense(w, 5));
  return s;
}

NetworkSpec matching_embedder_spec(Activation act, const KafSettings& kaf) {
  NetworkSpec s;
  s.name = "matching";
  s.input = {1, 28, 28};
  s.activation = act;
  s.kaf = kaf;
  s.embedding_dim = 64;
  std::size_t c = 1;
  for (std::size_t out : {32, 64}) {
    s.layers.push_back(conv(c, out, 3, 1));
    c = activate(s, out);
    s.layers.push_back(pool(2));
  }
  s.layers.push_back(flatten());
  s.layers.push_back(dense(c * 7 * 7, 256));
  std::size_t w = activate(s, 256);
  s.layers.push_back(dense(w, 128));
  w = activate(s, 128);
  s.layers.push_back(dense(w, 64));
  return s;
}

NetworkSpec named_spec(std::string_view name, Activation act, const KafSettings& kaf) {
  if (name == "mnist") return mnist_siamese_spec(act, kaf);
  if (name == "att") return att_siamese_spec(act, kaf);
  if (name == "matching") return matching_embedder_spec(act, kaf);
  fail(ErrorKind::config,
       "unknown architecture '" + std::string(name) + "' (valid: mnist, att, matching)");
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  trace_shapes(spec_);
  const auto& ks = spec_.kaf;
  for (const auto& d : spec_.layers) {
    LayerState st;
    st.desc = d;
    switch (d.kind) {
      case LayerKind::conv2d:
        st.params = {Tensor({d.out, d.in, d.kernel, d.kernel}), Tensor({d.out})};
        break;
      case LayerKind::linear:
        st.params = {Tensor({d.in, d.out}), Tensor({d.out})};
        break;
      case LayerKind::kaf:
      case LayerKind::kaf2d: {
        const Dictionary dict = make_dictionary(ks.dictionary_size, ks.bound);
        const bool two_d = d.kind == LayerKind::kaf2d;
        const std::size_t groups = ks.per_channel ? d.out : 1;
        st.kaf.emplace(dict.points, ks.gamma.value_or(dict.gamma),
                       two_d ? KafVariant::two_d : KafVariant::one_d, groups);
        st.grads = {Tensor::zeros_like(st.kaf->alpha())};
        break;
      }
      default:
        break;
    }
    for (const auto& p : st.params) st.grads.push_back(Tensor::zeros_like(p));
    layers_.push_back(std::move(st));
  }
}

void Network::initialize(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& st = layers_[i];
    Rng rng = make_rng(seed, i);
    const auto& d = st.desc;
    if (d.kind == LayerKind::conv2d || d.kind == LayerKind::linear) {
      const double fan_in = d.kind == LayerKind::conv2d
                                ? static_cast<double>(d.in * d.kernel * d.kernel)
                                : static_cast<double>(d.in);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : st.params[0].values()) v = normal(rng);
      st.params[1].fill(0.0);
    } else if (st.kaf) {
      const bool fit = spec_.kaf.init == KafInit::elu && d.kind == LayerKind::kaf;
      st.kaf->set_alpha(init_alpha(*st.kaf, fit ? AlphaInit::fit_target : AlphaInit::random,
                                   elu, rng));
    }
  }
  zero_grad();
}

Tensor Network::forward(const Tensor& x_in, Trace* trace) const {
  Tensor x = x_in.rank() == 3 ? x_in.reshaped({1, x_in.dim(0), x_in.dim(1), x_in.dim(2)})
                              : x_in;
  require(x.rank() == 4 && Shape(x.shape().begin() + 1, x.shape().end()) == spec_.input,
          ErrorKind::dimension,
          "network input " + shape_string(x.shape()) + " does not match [N]+" +
              shape_string(spec_.input));
  if (trace) {
    trace->inputs.clear();
    trace->argmax.assign(layers_.size(), {});
    trace->batch = x.dim(0);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& st = layers_[i];
    const auto& d = st.desc;
    if (trace) trace->inputs.push_back(x);
    switch (d.kind) {
      case LayerKind::conv2d:
        x = conv2d(x, st.params[0], st.params[1], {d.stride, d.padding});
        break;
      case LayerKind::maxpool2d: {
        PoolResult r = maxpool2d(x, d.window);
        if (trace) trace->argmax[i] = std::move(r.argmax);
        x = std::move(r.output);
        break;
      }
      case LayerKind::flatten: {
        const std::size_t n = x.dim(0);
        const std::size_t rest = x.size() / n;
        x = std::move(x).reshaped({n, rest});
        break;
      }
      case LayerKind::linear:
        x = linear(x, st.params[0], st.params[1]);
        break;
      case LayerKind::relu:
        x = relu(x);
        break;
      case LayerKind::kaf:
        x = kaf_forward(x, *st.kaf);
        break;
      case LayerKind::kaf2d:
        x = kaf2d_forward(x, *st.kaf);
        break;
    }
  }
  return x;
}

Tensor Network::backward(const Tensor& grad_output, const Trace& trace) {
  require(trace.inputs.size() == layers_.size(), ErrorKind::state,
          "backward called without a matching forward trace");
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    auto& st = layers_[i];
    const auto& d = st.desc;
    const Tensor& in = trace.inputs[i];
    switch (d.kind) {
      case LayerKind::conv2d: {
        Conv2dGrads cg = conv2d_backward(in, st.params[0], g, {d.stride, d.padding});
        axpy(1.0, cg.weights, st.grads[0]);
        axpy(1.0, cg.bias, st.grads[1]);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::maxpool2d:
        g = maxpool2d_backward(g, trace.argmax[i], in.shape());
        break;
      case LayerKind::flatten:
        g = std::move(g).reshaped(in.shape());
        break;
      case LayerKind::linear: {
        LinearGrads lg = linear_backward(in, st.params[0], g);
        axpy(1.0, lg.weights, st.grads[0]);
        axpy(1.0, lg.bias, st.grads[1]);
        g = std::move(lg.input);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(in, g);
        break;
      case LayerKind::kaf:
      case LayerKind::kaf2d: {
        KafGrads kg = d.kind == LayerKind::kaf ? kaf_backward(in, g, *st.kaf)
                                               : kaf2d_backward(in, g, *st.kaf);
        axpy(1.0, kg.alpha, st.grads[0]);
        g = std::move(kg.input);
        break;
      }
    }
  }
  return g;
}

void Network::zero_grad() {
  for (auto& st : layers_)
    for (auto& g : st.grads) g.fill(0.0);
}

std::vector<ParamSlot> Network::parameters() {
  std::vector<ParamSlot> slots;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& st = layers_[i];
    const std::string prefix = "layer" + std::to_string(i) + "." +
                               std::string(to_string(st.desc.kind)) + ".";
    if (st.kaf) {
      slots.push_back({prefix + "alpha", &st.kaf->alpha(), &st.grads[0]});
    } else if (!st.params.empty()) {
      slots.push_back({prefix + "weights", &st.params[0], &st.grads[0]});
      slots.push_back({prefix + "bias", &st.params[1], &st.grads[1]});
    }
  }
  return slots;
}

std::vector<ConstParamSlot> Network::parameters() const {
  std::vector<ConstParamSlot> out;
  for (const auto& slot : const_cast<Network*>(this)->parameters())
    out.push_back({slot.name, slot.value});
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& st : layers_) {
    if (st.kaf) n += st.kaf->alpha().size();
    for (const auto& p : st.params) n += p.size();
  }
  return n;
}

SiameseModel::SiameseModel(NetworkSpec spec, std::uint64_t seed)
    : net_(std::move(spec)), seed_(seed) {
  net_.initialize(seed);
}

SiameseModel::SiameseModel(Network net, std::uint64_t seed)
    : net_(std::move(net)), seed_(seed) {}

SiameseModel::Embeddings SiameseModel::forward(const Tensor& x1, const Tensor& x2) {
  require(x1.shape() == x2.shape(), ErrorKind::dimension,
          "siamese inputs differ in shape: " + shape_string(x1.shape()) + " vs " +
              shape_string(x2.shape()));
  const bool single = x1.rank() == 3;
  const Tensor a = single ? x1.reshaped({1, x1.dim(0), x1.dim(1), x1.dim(2)}) : x1;
  const Tensor b = single ? x2.reshaped({1, x2.dim(0), x2.dim(1), x2.dim(2)}) : x2;
  batch_ = a.dim(0);
  trace_.emplace();
  const Tensor out = net_.forward(concat_rows(a, b), &*trace_);
  return {out.rows(0, batch_), out.rows(batch_, 2 * batch_)};
}

void SiameseModel::backward(const Tensor& grad_e1, const Tensor& grad_e2) {
  require(trace_.has_value(), ErrorKind::state,
          "siamese backward requires a forward pass since the last update");
  const std::size_t e = net_.spec().embedding_dim;
  const Tensor g1 = grad_e1.reshaped({batch_, e});
  const Tensor g2 = grad_e2.reshaped({batch_, e});
  net_.backward(concat_rows(g1, g2), *trace_);
}

SiameseModel build_mnist_siamese(Activation act, std::uint64_t seed, const KafSettings& kaf) {
  return SiameseModel(mnist_siamese_spec(act, kaf), seed);
}

SiameseModel build_att_siamese(Activation act, std::uint64_t seed, const KafSettings& kaf) {
  return SiameseModel(att_siamese_spec(act, kaf), seed);
}

}  // namespace kafshot
