#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "network.hpp"

namespace kafshot {

enum class OptimizerKind { adam, sgd };

std::string_view to_string(OptimizerKind kind);

struct TrainConfig {
  std::string model = "mnist";  // mnist | att | matching
  Activation activation = Activation::relu;
  KafSettings kaf;
  std::string dataset = "synthetic";
  std::size_t subset = 500;  // 0 keeps the whole split
  double lr = 0.0005;
  int epochs = 10;
  int batch_size = 32;
  double margin = 2.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int steps_per_epoch = 0;  // 0: ceil(N / batch) for pairs, ceil(N / episode size) for episodes
  // episodes
  int ways = 5;
  int shots = 1;
  int queries = 5;
};

/// Throws a config error naming the first invalid field.
void validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep the values already in `base`; unknown keys are a config error.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct RunRecord {
  nlohmann::json config;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_seconds;
  nlohmann::json metrics = nlohmann::json::object();
  std::uint64_t seed = 0;
  long steps = 0;
};

/// Bias-corrected Adam update of one tensor. `t` is the 1-based step index.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t, double lr,
                 double beta1, double beta2, double eps);

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_gradients(std::span<const ParamSlot> params, double max_norm);

/// Adam or SGD over a fixed parameter list. step() rejects non-finite
/// gradients with a numeric error naming the parameter.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg);
  void step(std::span<const ParamSlot> params);
  long steps() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  TrainConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Called after every epoch with the network as it stands.
using Progress = std::function<void(int epoch, double mean_loss, const Network& net)>;

struct SiameseRun {
  SiameseModel model;
  RunRecord record;
};

/// Pair-sampled contrastive training. Throws DivergenceError on a non-finite loss.
SiameseRun train_siamese(const Dataset& ds, const TrainConfig& cfg, const Progress& progress = {});

/// Episode loss: mean NLL of the query labels under the cosine-attention head.
struct EpisodeLoss {
  double loss = 0.0;
  Tensor grad_support;  // [S,E]
  Tensor grad_query;    // [Q,E]
  std::size_t correct = 0;
};

EpisodeLoss episode_loss(const Tensor& support, std::span<const int> support_labels,
                         const Tensor& query, std::span<const int> query_labels,
                         std::size_t ways);

struct MatchingRun {
  Network model;
  RunRecord record;
};

MatchingRun train_matching(const Dataset& ds, const TrainConfig& cfg,
                           const Progress& progress = {});

/// Maps a batch [B,1,H,W] to embeddings [B,E]. Must be safe to call
/// concurrently.
using Embedder = std::function<Tensor(const Tensor&)>;

Embedder network_embedder(const Network& net);

/// Mean argmax accuracy of the matching head over `trials` fresh N-way
/// K-shot episodes with one query each. Trials fan out over up to
/// KAF_ONESHOT_THREADS threads; the result does not depend on scheduling.
double eval_oneshot(const Embedder& embed, const Dataset& ds, std::size_t ways,
                    std::size_t trials, std::uint64_t seed, std::size_t shots = 1);

/// Embeds all images in batches of `chunk`.
Tensor embed_all(const Embedder& embed, const Dataset& ds, std::size_t chunk = 128);

double eval_silhouette(const Embedder& embed, const Dataset& ds);

/// D_w for each (x1[i], x2[i]) pair, in input order.
std::vector<double> similarity_report(const Network& net, const Tensor& x1, const Tensor& x2);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

void write_loss_curve(const std::filesystem::path& path, const RunRecord& record);
/// Config echo plus final metrics; deliberately free of wall-clock values.
void write_metrics(const std::filesystem::path& path, const RunRecord& record);
void write_similarity_csv(const std::filesystem::path& path, std::span<const double> scores);
void write_embeddings_csv(const std::filesystem::path& path, const Tensor& embeddings,
                          std::span<const int> labels);

}  // namespace kafshot
