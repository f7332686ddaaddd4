#include "training.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "error.hpp"
#include "losses.hpp"
#include "rng.hpp"

namespace kafshot {
using nlohmann::json;

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

void validate(const TrainConfig& c) {
  auto need = [](bool ok, const char* field, const std::string& why) {
    require(ok, ErrorKind::config, std::string(field) + " " + why);
  };
  need(c.model == "mnist" || c.model == "att" || c.model == "matching", "model",
       "must be one of mnist, att, matching (got '" + c.model + "')");
  need(c.lr > 0 && std::isfinite(c.lr), "lr", "must be positive");
  need(c.epochs > 0, "epochs", "must be positive");
  need(c.batch_size > 0, "batch", "must be positive");
  need(c.margin > 0 && std::isfinite(c.margin), "margin", "must be positive");
  need(c.beta1 >= 0 && c.beta1 < 1, "beta1", "must lie in [0,1)");
  need(c.beta2 >= 0 && c.beta2 < 1, "beta2", "must lie in [0,1)");
  need(c.eps > 0, "eps", "must be positive");
  need(c.steps_per_epoch >= 0, "steps_per_epoch", "must be non-negative");
  need(c.ways >= 1, "nway", "must be positive");
  need(c.shots >= 1, "kshot", "must be positive");
  need(c.queries >= 1, "queries", "must be positive");
  need(c.kaf.dictionary_size >= 1, "D", "must be positive");
  need(c.kaf.bound > 0 && std::isfinite(c.kaf.bound), "bound", "must be positive");
  need(!c.kaf.gamma || *c.kaf.gamma > 0, "gamma", "must be positive");
}

json to_json(const TrainConfig& c) {
  json j;
  j["model"] = c.model;
  j["activation"] = std::string(to_string(c.activation));
  j["D"] = c.kaf.dictionary_size;
  j["bound"] = c.kaf.bound;
  j["gamma"] = c.kaf.gamma ? json(*c.kaf.gamma) : json(nullptr);
  j["per_channel"] = c.kaf.per_channel;
  j["kaf_init"] = c.kaf.init == KafInit::elu ? "elu" : "random";
  j["dataset"] = c.dataset;
  j["subset"] = c.subset;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch_size;
  j["margin"] = c.margin;
  j["seed"] = c.seed;
  j["optimizer"] = std::string(to_string(c.optimizer));
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["clip_norm"] = c.clip_norm;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["nway"] = c.ways;
  j["kshot"] = c.shots;
  j["queries"] = c.queries;
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig c) {
  require(j.is_object(), ErrorKind::config, "config document must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "model") c.model = value.get<std::string>();
      else if (key == "activation") c.activation = parse_activation(value.get<std::string>());
      else if (key == "D") c.kaf.dictionary_size = value.get<int>();
      else if (key == "bound") c.kaf.bound = value.get<double>();
      else if (key == "gamma") c.kaf.gamma = value.is_null() ? std::nullopt : std::optional(value.get<double>());
      else if (key == "per_channel") c.kaf.per_channel = value.get<bool>();
      else if (key == "kaf_init") {
        const auto s = value.get<std::string>();
        require(s == "random" || s == "elu", ErrorKind::config,
                "kaf_init must be random or elu (got '" + s + "')");
        c.kaf.init = s == "elu" ? KafInit::elu : KafInit::random;
      } else if (key == "dataset") c.dataset = value.get<std::string>();
      else if (key == "subset") c.subset = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch") c.batch_size = value.get<int>();
      else if (key == "margin") c.margin = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "optimizer") {
        const auto s = value.get<std::string>();
        require(s == "adam" || s == "sgd", ErrorKind::config,
                "optimizer must be adam or sgd (got '" + s + "')");
        c.optimizer = s == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
      } else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else if (key == "steps_per_epoch") c.steps_per_epoch = value.get<int>();
      else if (key == "nway") c.ways = value.get<int>();
      else if (key == "kshot") c.shots = value.get<int>();
      else if (key == "queries") c.queries = value.get<int>();
      else fail(ErrorKind::config, "unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      fail(ErrorKind::config, "config key '" + key + "' has the wrong type: " + e.what());
    }
  }
  return c;
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t, double lr,
                 double beta1, double beta2, double eps) {
  require(t >= 1, ErrorKind::parameter, "Adam step index must be >= 1");
  require(param.shape() == grad.shape() && m.shape() == grad.shape() &&
              v.shape() == grad.shape(),
          ErrorKind::dimension, "Adam parameter, gradient and moment shapes differ");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

double clip_gradients(std::span<const ParamSlot> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += dot(*p.grad, *p.grad);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& p : params)
      for (double& g : p.grad->values()) g *= scale;
  }
  return norm;
}

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

void Optimizer::step(std::span<const ParamSlot> params) {
  for (const auto& p : params) {
    const auto g = p.grad->values();
    const auto bad = std::find_if(g.begin(), g.end(), [](double x) { return !std::isfinite(x); });
    require(bad == g.end(), ErrorKind::numeric,
            "non-finite gradient in " + p.name + " at element " +
                std::to_string(bad - g.begin()));
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros_like(*p.value));
      v_.push_back(Tensor::zeros_like(*p.value));
    }
  }
  require(m_.size() == params.size(), ErrorKind::state,
          "optimizer parameter list changed between steps");
  clip_gradients(params, cfg_.clip_norm);
  ++t_;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (cfg_.optimizer == OptimizerKind::adam) {
      adam_update(*params[k].value, *params[k].grad, m_[k], v_[k], t_, cfg_.lr, cfg_.beta1,
                  cfg_.beta2, cfg_.eps);
    } else {
      axpy(-cfg_.lr, *params[k].grad, *params[k].value);
    }
  }
}

namespace {

using Clock = std::chrono::steady_clock;

NetworkSpec spec_for(const TrainConfig& cfg, const Dataset& ds) {
  NetworkSpec spec = named_spec(cfg.model, cfg.activation, cfg.kaf);
  require(spec.input.size() == 3 && spec.input[1] == ds.height() && spec.input[2] == ds.width(),
          ErrorKind::config,
          "model " + cfg.model + " expects " + std::to_string(spec.input[1]) + "x" +
              std::to_string(spec.input[2]) + " images but dataset " + ds.name + " has " +
              std::to_string(ds.height()) + "x" + std::to_string(ds.width()));
  return spec;
}

json class_counts_json(const Dataset& ds) {
  json j = json::object();
  for (const auto& [cls, n] : ds.class_counts()) j[std::to_string(cls)] = n;
  return j;
}

void check_finite(double loss, long step) {
  if (!std::isfinite(loss))
    throw DivergenceError(step, "training diverged: non-finite loss at step " +
                                    std::to_string(step));
}

// A non-finite gradient is the same failure as a non-finite loss, one step on.
void step_or_diverge(Optimizer& opt, std::span<const ParamSlot> params, long step) {
  try {
    opt.step(params);
  } catch (const DivergenceError&) {
    throw;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numeric) throw;
    throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": " +
                                    e.what());
  }
}

}  // namespace

SiameseRun train_siamese(const Dataset& ds, const TrainConfig& cfg, const Progress& progress) {
  validate(cfg);
  SiameseRun run{SiameseModel(spec_for(cfg, ds), cfg.seed), {}};
  // fail fast on datasets the pair sampler cannot serve
  sample_pairs(ds, 2, cfg.seed);

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                              : static_cast<long>((ds.size() + batch - 1) / batch);
  Optimizer opt(cfg);
  auto params = run.model.network().parameters();
  RunRecord& rec = run.record;
  rec.config = to_json(cfg);
  rec.seed = cfg.seed;

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    double total = 0.0;
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      const PairBatch pb = sample_pairs(ds, batch, mix_seed(cfg.seed, 1'000'000 + step));
      const auto emb = run.model.forward(pb.x1, pb.x2);
      const auto res = contrastive_loss_batch(emb.e1, emb.e2, pb.y, cfg.margin);
      check_finite(res.loss, step);
      run.model.network().zero_grad();
      run.model.backward(res.grad_e1, res.grad_e2);
      step_or_diverge(opt, params, step);
      run.model.invalidate();
      total += res.loss;
    }
    const double mean = total / static_cast<double>(steps_per_epoch);
    rec.epoch_loss.push_back(mean);
    rec.epoch_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    if (progress) progress(epoch, mean, run.model.network());
  }
  rec.steps = step;
  rec.metrics["final_loss"] = rec.epoch_loss.back();
  rec.metrics["steps"] = step;
  rec.metrics["parameters"] = run.model.network().parameter_count();
  rec.metrics["train_size"] = ds.size();
  rec.metrics["train_class_counts"] = class_counts_json(ds);
  return run;
}

EpisodeLoss episode_loss(const Tensor& support, std::span<const int> support_labels,
                         const Tensor& query, std::span<const int> query_labels,
                         std::size_t ways) {
  require(query.rank() == 2 && query.dim(0) == query_labels.size() && !query_labels.empty(),
          ErrorKind::dimension, "episode query embeddings must be [Q,E] with Q labels");
  const double scale = 1.0 / static_cast<double>(query_labels.size());
  EpisodeLoss out;
  out.grad_support = Tensor::zeros_like(support);
  out.grad_query = Tensor::zeros_like(query);
  const std::size_t e = query.dim(1);
  for (std::size_t q = 0; q < query_labels.size(); ++q) {
    const auto r = matching_nll(support, support_labels, query.slice(q), ways, query_labels[q]);
    out.loss += scale * r.loss;
    axpy(scale, r.grad_support, out.grad_support);
    for (std::size_t k = 0; k < e; ++k) out.grad_query.at(q, k) = scale * r.grad_query[k];
    const auto best = std::max_element(r.probabilities.begin(), r.probabilities.end());
    if (best - r.probabilities.begin() == query_labels[q]) ++out.correct;
  }
  return out;
}

MatchingRun train_matching(const Dataset& ds, const TrainConfig& cfg, const Progress& progress) {
  validate(cfg);
  const auto ways = static_cast<std::size_t>(cfg.ways);
  const auto shots = static_cast<std::size_t>(cfg.shots);
  const auto queries = static_cast<std::size_t>(cfg.queries);
  // reject unusable datasets before building anything
  sample_episode(ds, ways, shots, queries, cfg.seed);

  MatchingRun run{Network(spec_for(cfg, ds)), {}};
  run.model.initialize(cfg.seed);
  const std::size_t episode_size = ways * shots + queries;
  const long steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                              : static_cast<long>((ds.size() + episode_size - 1) / episode_size);
  Optimizer opt(cfg);
  auto params = run.model.parameters();
  RunRecord& rec = run.record;
  rec.config = to_json(cfg);
  rec.seed = cfg.seed;

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    double total = 0.0;
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      const Episode ep =
          sample_episode(ds, ways, shots, queries, mix_seed(cfg.seed, 2'000'000 + step));
      Trace trace;
      const Tensor emb = run.model.forward(concat_rows(ep.support, ep.query), &trace);
      const std::size_t n_support = ep.support_labels.size();
      const auto res = episode_loss(emb.rows(0, n_support), ep.support_labels,
                                    emb.rows(n_support, emb.dim(0)), ep.query_labels, ways);
      check_finite(res.loss, step);
      run.model.zero_grad();
      run.model.backward(concat_rows(res.grad_support, res.grad_query), trace);
      step_or_diverge(opt, params, step);
      total += res.loss;
    }
    const double mean = total / static_cast<double>(steps_per_epoch);
    rec.epoch_loss.push_back(mean);
    rec.epoch_seconds.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    if (progress) progress(epoch, mean, run.model);
  }
  rec.steps = step;
  rec.metrics["final_loss"] = rec.epoch_loss.back();
  rec.metrics["steps"] = step;
  rec.metrics["parameters"] = run.model.parameter_count();
  rec.metrics["train_size"] = ds.size();
  rec.metrics["train_class_counts"] = class_counts_json(ds);
  return run;
}

Embedder network_embedder(const Network& net) {
  require(!net.layers().empty(), ErrorKind::state, "network has no layers");
  return [&net](const Tensor& x) { return net.forward(x); };
}

namespace {

std::size_t oneshot_threads(std::size_t trials) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KAF_ONESHOT_THREADS"); env && *env) {
    std::size_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, v);
    require(ec == std::errc() && ptr == end && v >= 1, ErrorKind::config,
            std::string("KAF_ONESHOT_THREADS must be a positive integer (got '") + env + "')");
    cap = v;
  }
  return std::min(cap, trials);
}

}  // namespace

double eval_oneshot(const Embedder& embed, const Dataset& ds, std::size_t ways,
                    std::size_t trials, std::uint64_t seed, std::size_t shots) {
  require(trials > 0, ErrorKind::parameter, "trials must be positive");
  // surface sampling errors on the calling thread
  sample_episode(ds, ways, shots, 1, mix_seed(seed, 0));

  std::vector<char> correct(trials, 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < trials; t = next++) {
      try {
        const Episode ep = sample_episode(ds, ways, shots, 1, mix_seed(seed, t));
        const Tensor emb = embed(concat_rows(ep.support, ep.query));
        const std::size_t n_support = ep.support_labels.size();
        const auto p = matching_forward(emb.rows(0, n_support), ep.support_labels,
                                        emb.slice(n_support), ways);
        const auto best = std::max_element(p.begin(), p.end()) - p.begin();
        correct[t] = best == ep.query_labels[0];
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = trials;
      }
    }
  };
  const std::size_t n_threads = oneshot_threads(trials);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  const auto hits = std::count(correct.begin(), correct.end(), 1);
  return static_cast<double>(hits) / static_cast<double>(trials);
}

Tensor embed_all(const Embedder& embed, const Dataset& ds, std::size_t chunk) {
  require(ds.size() > 0 && chunk > 0, ErrorKind::parameter, "nothing to embed");
  Tensor out;
  for (std::size_t b = 0; b < ds.size(); b += chunk) {
    const Tensor part = embed(ds.images.rows(b, std::min(ds.size(), b + chunk)));
    out = out.empty() ? part : concat_rows(out, part);
  }
  return out;
}

double eval_silhouette(const Embedder& embed, const Dataset& ds) {
  return silhouette_score({embed_all(embed, ds), ds.labels});
}

std::vector<double> similarity_report(const Network& net, const Tensor& x1, const Tensor& x2) {
  require(!net.layers().empty(), ErrorKind::state, "similarity report needs a built model");
  require(x1.shape() == x2.shape(), ErrorKind::dimension,
          "pair tensors differ: " + shape_string(x1.shape()) + " vs " + shape_string(x2.shape()));
  const Tensor e1 = net.forward(x1);
  const Tensor e2 = net.forward(x2);
  std::vector<double> out(e1.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = embedding_distance(e1.slice(i), e2.slice(i));
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  return out;
}

}  // namespace

void write_loss_curve(const std::filesystem::path& path, const RunRecord& rec) {
  auto out = open_out(path);
  out << "epoch,mean_loss,seconds\n";
  for (std::size_t e = 0; e < rec.epoch_loss.size(); ++e) {
    const double secs = e < rec.epoch_seconds.size() ? rec.epoch_seconds[e] : 0.0;
    out << e + 1 << ',' << format_double(rec.epoch_loss[e]) << ',' << format_double(secs) << '\n';
  }
}

void write_metrics(const std::filesystem::path& path, const RunRecord& rec) {
  json j;
  j["config"] = rec.config;
  j["seed"] = rec.seed;
  j["epoch_loss"] = rec.epoch_loss;
  j["metrics"] = rec.metrics;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_similarity_csv(const std::filesystem::path& path, std::span<const double> scores) {
  auto out = open_out(path);
  out << "pair_id,dissimilarity\n";
  for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << format_double(scores[i]) << '\n';
}

void write_embeddings_csv(const std::filesystem::path& path, const Tensor& emb,
                          std::span<const int> labels) {
  require(emb.rank() == 2 && emb.dim(0) == labels.size(), ErrorKind::dimension,
          "embedding rows and labels disagree");
  auto out = open_out(path);
  out << "id,label";
  for (std::size_t k = 0; k < emb.dim(1); ++k) out << ",e" << k;
  out << '\n';
  for (std::size_t i = 0; i < emb.dim(0); ++i) {
    out << i << ',' << labels[i];
    for (std::size_t k = 0; k < emb.dim(1); ++k) out << ',' << format_double(emb.at(i, k));
    out << '\n';
  }
}

}  // namespace kafshot
