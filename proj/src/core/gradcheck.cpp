#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "error.hpp"
#include "kaf.hpp"
#include "layers.hpp"
#include "losses.hpp"
#include "network.hpp"
#include "rng.hpp"
#include "training.hpp"

namespace kafshot {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

namespace {

// Minimum distance of sampled points from any non-smooth point (ReLU kink,
// pooling tie, D = 0, D = m); well beyond the widest stencil offset.
constexpr double kClearance = 1e-2;

struct Context {
  const GradcheckOptions& opts;
  GradcheckEntry& entry;
  std::uint64_t seed;
  Rng rng;
  bool corrupted = false;

  Tensor normal(Shape shape, double std = 1.0) {
    std::normal_distribution<double> d(0.0, std);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = d(rng);
    return t;
  }

  Tensor uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = d(rng);
    return t;
  }

  // Compares an analytic gradient with central differences of f around x.
  void compare(const std::string& tensor, Tensor analytic, const ScalarFunction& f,
               const Tensor& x) {
    if (!corrupted && opts.corrupt == entry.name) {
      analytic[0] += 0.1 * (std::abs(analytic[0]) + 1.0);
      corrupted = true;
    }
    const Tensor numeric = finite_difference_grad(f, x, opts.step, FdStencil::five_point);
    require(numeric.shape() == analytic.shape(), ErrorKind::dimension,
            entry.name + "/" + tensor + ": analytic gradient has shape " +
                shape_string(analytic.shape()) + ", expected " + shape_string(numeric.shape()));
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double err = relative_error(analytic[i], numeric[i]);
      if (err > entry.max_rel_error || !std::isfinite(err)) {
        entry.max_rel_error = std::isfinite(err) ? err : INFINITY;
        entry.worst_seed = seed;
        entry.worst_tensor = tensor;
        entry.worst_index = i;
        entry.worst_analytic = analytic[i];
        entry.worst_numeric = numeric[i];
      }
    }
    entry.elements += numeric.size();
  }
};

// Random linear read-out so every output element contributes to the scalar.
double project(const Tensor& y, const Tensor& w) { return dot(y, w); }

void check_conv(Context& c) {
  const Conv2dGeometry geom{1 + c.seed % 2, c.seed % 3 == 0 ? 1u : 0u};
  const Tensor x = c.normal({2, 2, 6, 5});
  const Tensor w = c.normal({3, 2, 3, 3}, 0.5);
  const Tensor b = c.normal({3});
  const Tensor up = c.normal(conv2d(x, w, b, geom).shape());
  const auto g = conv2d_backward(x, w, up, geom);
  c.compare("input", g.input, [&](const Tensor& t) { return project(conv2d(t, w, b, geom), up); }, x);
  c.compare("weights", g.weights, [&](const Tensor& t) { return project(conv2d(x, t, b, geom), up); }, w);
  c.compare("bias", g.bias, [&](const Tensor& t) { return project(conv2d(x, w, t, geom), up); }, b);
}

double pool_gap(const Tensor& x, std::size_t w);

void check_pool(Context& c) {
  Tensor x = c.normal({2, 3, 4, 6});
  while (pool_gap(x, 2) <= kClearance) x = c.normal(x.shape());
  const auto fwd = maxpool2d(x, 2);
  const Tensor up = c.normal(fwd.output.shape());
  c.compare("input", maxpool2d_backward(up, fwd.argmax, x.shape()),
            [&](const Tensor& t) { return project(maxpool2d(t, 2).output, up); }, x);
}

void check_linear(Context& c) {
  const Tensor x = c.normal({3, 5});
  const Tensor w = c.normal({5, 4});
  const Tensor b = c.normal({4});
  const Tensor up = c.normal({3, 4});
  const auto g = linear_backward(x, w, up);
  c.compare("input", g.input, [&](const Tensor& t) { return project(linear(t, w, b), up); }, x);
  c.compare("weights", g.weights, [&](const Tensor& t) { return project(linear(x, t, b), up); }, w);
  c.compare("bias", g.bias, [&](const Tensor& t) { return project(linear(x, w, t), up); }, b);
}

void check_relu(Context& c) {
  Tensor x = c.normal({4, 6});
  // keep clear of the kink at zero
  for (double& v : x.values())
    if (std::abs(v) < kClearance) v = v < 0 ? -0.5 : 0.5;
  const Tensor up = c.normal(x.shape());
  c.compare("input", relu_backward(x, up), [&](const Tensor& t) { return project(relu(t), up); }, x);
}

KafParams random_kaf(Context& c, KafVariant variant, std::size_t groups) {
  const Dictionary dict = make_dictionary(c.seed % 2 ? 12 : 20, 3.0);
  KafParams p(dict.points, dict.gamma, variant, groups);
  p.set_alpha(c.normal(p.alpha().shape(), 0.3));
  return p;
}

void check_kaf(Context& c) {
  // odd seeds share one mixture across channels
  const std::size_t channels = 3;
  KafParams p = random_kaf(c, KafVariant::one_d, c.seed % 2 ? 1 : channels);
  const Tensor x = c.uniform({2, channels, 4}, -4.0, 4.0);
  const Tensor up = c.normal(x.shape());
  const auto g = kaf_backward(x, up, p);
  c.compare("input", g.input, [&](const Tensor& t) { return project(kaf_forward(t, p), up); }, x);
  c.compare("alpha", g.alpha,
            [&](const Tensor& t) {
              KafParams q = p;
              q.set_alpha(t);
              return project(kaf_forward(x, q), up);
            },
            p.alpha());
}

void check_kaf2d(Context& c) {
  const std::size_t channels = 4;
  KafParams p = random_kaf(c, KafVariant::two_d, c.seed % 2 ? 1 : channels / 2);
  const Tensor x = c.uniform({2, channels, 3}, -4.0, 4.0);
  const Tensor up = c.normal(kaf2d_forward(x, p).shape());
  const auto g = kaf2d_backward(x, up, p);
  c.compare("input", g.input, [&](const Tensor& t) { return project(kaf2d_forward(t, p), up); }, x);
  c.compare("alpha", g.alpha,
            [&](const Tensor& t) {
              KafParams q = p;
              q.set_alpha(t);
              return project(kaf2d_forward(x, q), up);
            },
            p.alpha());
}

void check_contrastive(Context& c) {
  const double margin = 2.0;
  const std::size_t batch = 6, dim = 3;
  Tensor e1 = c.normal({batch, dim});
  Tensor e2 = c.normal({batch, dim});
  // keep every pair away from the non-smooth points D = 0 and D = m
  for (std::size_t i = 0; i < batch; ++i) {
    while (true) {
      const double d = embedding_distance(e1.slice(i), e2.slice(i));
      if (d > kClearance && std::abs(d - margin) > kClearance) break;
      for (std::size_t k = 0; k < dim; ++k) e2.at(i, k) += 0.1;
    }
  }
  std::vector<PairLabel> y;
  for (std::size_t i = 0; i < batch; ++i)
    y.push_back(i % 2 ? PairLabel::dissimilar : PairLabel::similar);
  const auto r = contrastive_loss_batch(e1, e2, y, margin);
  c.compare("e1", r.grad_e1, [&](const Tensor& t) { return contrastive_loss_batch(t, e2, y, margin).loss; }, e1);
  c.compare("e2", r.grad_e2, [&](const Tensor& t) { return contrastive_loss_batch(e1, t, y, margin).loss; }, e2);
}

void check_matching(Context& c) {
  const std::size_t ways = 5, dim = 6;
  const Tensor support = c.normal({ways + 1, dim});
  const std::vector<int> labels{0, 1, 2, 3, 4, static_cast<int>(c.seed % ways)};
  const Tensor query = c.normal({dim});
  const int target = static_cast<int>((c.seed * 7) % ways);
  const auto r = matching_nll(support, labels, query, ways, target);
  c.compare("support", r.grad_support,
            [&](const Tensor& t) { return matching_nll(t, labels, query, ways, target).loss; }, support);
  c.compare("query", r.grad_query,
            [&](const Tensor& t) { return matching_nll(support, labels, t, ways, target).loss; }, query);
}

// conv -> pool -> kaf -> conv -> kaf2d -> flatten -> linear -> relu -> linear
NetworkSpec tiny_spec(std::size_t embedding) {
  NetworkSpec s;
  s.name = "tiny";
  s.input = {1, 6, 6};
  s.activation = Activation::kaf;
  s.kaf.dictionary_size = 10;
  auto d = [](LayerKind kind, std::size_t in, std::size_t out, std::size_t kernel = 0,
              std::size_t padding = 0, std::size_t window = 0) {
    LayerDescriptor l;
    l.kind = kind;
    l.in = in;
    l.out = out;
    l.kernel = kernel;
    l.padding = padding;
    l.window = window;
    return l;
  };
  s.layers = {d(LayerKind::conv2d, 1, 4, 3, 1), d(LayerKind::maxpool2d, 0, 0, 0, 0, 2),
              d(LayerKind::kaf, 4, 4),          d(LayerKind::conv2d, 4, 4, 3),
              d(LayerKind::kaf2d, 4, 2),        d(LayerKind::flatten, 0, 0),
              d(LayerKind::linear, 2, 6),       d(LayerKind::relu, 6, 6),
              d(LayerKind::linear, 6, embedding)};
  s.embedding_dim = embedding;
  return s;
}

// Smallest gap between the largest and second-largest value of any window.
double pool_gap(const Tensor& x, std::size_t w) {
  double gap = INFINITY;
  std::vector<double> win(w * w);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t ch = 0; ch < x.dim(1); ++ch)
      for (std::size_t oy = 0; oy < x.dim(2) / w; ++oy)
        for (std::size_t ox = 0; ox < x.dim(3) / w; ++ox) {
          for (std::size_t dy = 0; dy < w; ++dy)
            for (std::size_t dx = 0; dx < w; ++dx) win[dy * w + dx] = x.at(n, ch, oy * w + dy, ox * w + dx);
          if (win.size() < 2) return INFINITY;
          std::partial_sort(win.begin(), win.begin() + 2, win.end(), std::greater<>());
          gap = std::min(gap, win[0] - win[1]);
        }
  return gap;
}

// Default initialisation leaves biases at zero, which can make every
// embedding collinear; random biases keep the composed checks generic.
void init_tiny(Context& c, Network& net) {
  net.initialize(c.seed);
  for (auto& slot : net.parameters())
    if (slot.name.ends_with(".bias")) axpy(1.0, c.normal(slot.value->shape(), 0.3), *slot.value);
}

// Smallest distance of any ReLU input from zero, or of any pooling window's
// runner-up from its maximum. Central differences straddling such a point
// measure a one-sided slope mix rather than the derivative.
double kink_distance(const Network& net, const Tensor& x) {
  Trace trace;
  net.forward(x, &trace);
  double dist = INFINITY;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& d = net.layers()[i].desc;
    const Tensor& in = trace.inputs[i];
    if (d.kind == LayerKind::relu) {
      for (double v : in.values()) dist = std::min(dist, std::abs(v));
    } else if (d.kind == LayerKind::maxpool2d) {
      dist = std::min(dist, pool_gap(in, d.window));
    }
  }
  return dist;
}

// Draws network inputs that sit clear of every non-smooth point and whose
// embeddings are non-zero (cosine similarity is undefined at the origin).
Tensor smooth_input(Context& c, const Network& net, Shape shape) {
  for (;;) {
    Tensor x = c.normal(shape);
    if (kink_distance(net, x) <= kClearance) continue;
    const Tensor e = net.forward(x);
    bool nonzero = true;
    for (std::size_t i = 0; i < e.dim(0); ++i) nonzero = nonzero && dot(e.slice(i), e.slice(i)) > 1e-2;
    if (nonzero) return x;
  }
}

// Compares every parameter gradient of `net` against differences of `loss`.
void compare_parameters(Context& c, Network& net, const std::function<double()>& loss) {
  for (auto& slot : net.parameters()) {
    const Tensor analytic = *slot.grad;
    const Tensor saved = *slot.value;
    c.compare(slot.name, analytic,
              [&](const Tensor& t) {
                *slot.value = t;
                const double l = loss();
                *slot.value = saved;
                return l;
              },
              saved);
  }
}

void check_network(Context& c) {
  Network net(tiny_spec(3));
  init_tiny(c, net);
  const Tensor x = smooth_input(c, net, {2, 1, 6, 6});
  const Tensor up = c.normal({2, 3});
  Trace trace;
  net.forward(x, &trace);
  net.zero_grad();
  const Tensor gx = net.backward(up, trace);
  c.compare("input", gx, [&](const Tensor& t) { return project(net.forward(t), up); }, x);
  compare_parameters(c, net, [&] { return project(net.forward(x), up); });
}

void check_siamese(Context& c) {
  Network net(tiny_spec(2));
  init_tiny(c, net);
  const std::vector<PairLabel> y{PairLabel::similar, PairLabel::dissimilar, PairLabel::similar};
  const double margin = 2.0;
  Tensor x1, x2;
  for (bool clear = false; !clear;) {
    x1 = smooth_input(c, net, {3, 1, 6, 6});
    x2 = smooth_input(c, net, {3, 1, 6, 6});
    const Tensor e1 = net.forward(x1), e2 = net.forward(x2);
    clear = true;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = embedding_distance(e1.slice(i), e2.slice(i));
      clear = clear && d > kClearance && std::abs(d - margin) > kClearance;
    }
  }
  SiameseModel model(std::move(net), c.seed);
  const auto emb = model.forward(x1, x2);
  const auto r = contrastive_loss_batch(emb.e1, emb.e2, y, margin);
  model.network().zero_grad();
  model.backward(r.grad_e1, r.grad_e2);
  model.invalidate();
  compare_parameters(c, model.network(), [&] {
    return contrastive_loss_batch(model.embed(x1), model.embed(x2), y, margin).loss;
  });
}

void check_episode(Context& c) {
  const std::size_t ways = 3;
  Network net(tiny_spec(4));
  init_tiny(c, net);
  const Tensor support = smooth_input(c, net, {ways, 1, 6, 6});
  const Tensor query = smooth_input(c, net, {ways, 1, 6, 6});
  const std::vector<int> labels{0, 1, 2};
  const std::vector<int> query_labels{2, 0, 1};
  auto loss = [&] {
    const Tensor e = net.forward(concat_rows(support, query));
    return episode_loss(e.rows(0, ways), labels, e.rows(ways, 2 * ways), query_labels, ways).loss;
  };
  Trace trace;
  const Tensor e = net.forward(concat_rows(support, query), &trace);
  const auto r = episode_loss(e.rows(0, ways), labels, e.rows(ways, 2 * ways), query_labels, ways);
  net.zero_grad();
  net.backward(concat_rows(r.grad_support, r.grad_query), trace);
  compare_parameters(c, net, loss);
}

struct Case {
  const char* name;
  void (*run)(Context&);
};

constexpr Case kCases[] = {
    {"conv2d", check_conv},          {"maxpool2d", check_pool},
    {"linear", check_linear},        {"relu", check_relu},
    {"kaf", check_kaf},              {"kaf2d", check_kaf2d},
    {"contrastive", check_contrastive}, {"matching_nll", check_matching},
    {"network", check_network},      {"siamese", check_siamese},
    {"episode", check_episode},
};

}  // namespace

std::vector<std::string> gradcheck_entry_names() {
  std::vector<std::string> names;
  for (const auto& c : kCases) names.emplace_back(c.name);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  require(opts.seeds >= 1, ErrorKind::parameter, "gradcheck needs at least one seed");
  require(opts.step > 0, ErrorKind::parameter, "finite-difference step must be positive");
  if (!opts.corrupt.empty()) {
    const auto names = gradcheck_entry_names();
    require(std::find(names.begin(), names.end(), opts.corrupt) != names.end(),
            ErrorKind::config, "unknown gradcheck entry '" + opts.corrupt + "'");
  }
  GradcheckReport report;
  for (std::size_t k = 0; k < std::size(kCases); ++k) {
    GradcheckEntry entry;
    entry.name = kCases[k].name;
    for (int s = 0; s < opts.seeds; ++s) {
      const std::uint64_t seed = opts.base_seed + static_cast<std::uint64_t>(s);
      Context ctx{opts, entry, seed, make_rng(seed, 100 + k)};
      kCases[k].run(ctx);
    }
    entry.passed = entry.max_rel_error < opts.tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace kafshot
