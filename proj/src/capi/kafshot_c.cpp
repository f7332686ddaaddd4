#include "kafshot/kafshot.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "data.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "kaf.hpp"
#include "losses.hpp"
#include "network.hpp"
#include "training.hpp"

using nlohmann::json;
using namespace kafshot;

struct kaf_dataset {
  Dataset ds;
};

struct kaf_model {
  Network net;
  std::uint64_t seed = 0;
  RunRecord record;
};

namespace {

thread_local std::string g_last_error;
thread_local long g_divergence_step = -1;

kaf_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return KAF_ERR_DIMENSION;
    case ErrorKind::parameter: return KAF_ERR_PARAMETER;
    case ErrorKind::numeric: return KAF_ERR_NUMERIC;
    case ErrorKind::format: return KAF_ERR_FORMAT;
    case ErrorKind::sampling: return KAF_ERR_SAMPLING;
    case ErrorKind::state: return KAF_ERR_STATE;
    case ErrorKind::metric: return KAF_ERR_METRIC;
    case ErrorKind::training: return KAF_ERR_TRAINING;
    case ErrorKind::config: return KAF_ERR_CONFIG;
    case ErrorKind::io: return KAF_ERR_IO;
  }
  return KAF_ERR_INTERNAL;
}

// Runs `body`, translating exceptions into status codes at the boundary.
template <class F>
kaf_status guard(F&& body) {
  g_last_error.clear();
  g_divergence_step = -1;
  try {
    body();
    return KAF_OK;
  } catch (const DivergenceError& e) {
    g_last_error = e.what();
    g_divergence_step = e.step();
    return KAF_ERR_DIVERGED;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return KAF_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return KAF_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return KAF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KAF_ERR_INTERNAL;
  }
}

kaf_status null_arg() {
  g_last_error = "a required pointer argument is NULL";
  g_divergence_step = -1;
  return KAF_ERR_NULL;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse(const char* text) {
  if (!text || !*text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, std::string("malformed JSON: ") + e.what());
  }
}

DatasetRequest request_from_json(const json& j) {
  require(j.is_object(), ErrorKind::config, "dataset request must be a JSON object");
  DatasetRequest r;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "kind") r.kind = v.get<std::string>();
      else if (key == "dir") r.dir = v.get<std::string>();
      else if (key == "split") r.split = v.get<std::string>();
      else if (key == "subset") r.subset = v.get<std::size_t>();
      else if (key == "seed") r.seed = v.get<std::uint64_t>();
      else if (key == "extent") r.extent = v.get<std::size_t>();
      else if (key == "classes") r.classes = v.get<int>();
      else if (key == "per_class") r.per_class = v.get<int>();
      else if (key == "noise") r.noise = v.get<double>();
      else if (key == "first_class") r.first_class = v.get<int>();
      else fail(ErrorKind::config, "unknown dataset key '" + key + "'");
    } catch (const json::exception& e) {
      fail(ErrorKind::config, "dataset key '" + key + "' has the wrong type: " + e.what());
    }
  }
  return r;
}

json record_json(const RunRecord& r) {
  return {{"config", r.config},
          {"seed", r.seed},
          {"epoch_loss", r.epoch_loss},
          {"epoch_seconds", r.epoch_seconds},
          {"metrics", r.metrics}};
}

Tensor to_images(const double* images, std::size_t n, std::size_t h, std::size_t w) {
  require(n > 0 && h > 0 && w > 0, ErrorKind::dimension, "image batch has an empty extent");
  return Tensor({n, 1, h, w}, std::vector<double>(images, images + n * h * w));
}

}  // namespace

extern "C" {

const char* kaf_version(void) { return "1.0.0"; }

const char* kaf_status_name(kaf_status s) {
  switch (s) {
    case KAF_OK: return "ok";
    case KAF_ERR_DIMENSION: return "dimension";
    case KAF_ERR_PARAMETER: return "parameter";
    case KAF_ERR_NUMERIC: return "numeric";
    case KAF_ERR_FORMAT: return "format";
    case KAF_ERR_SAMPLING: return "sampling";
    case KAF_ERR_STATE: return "state";
    case KAF_ERR_METRIC: return "metric";
    case KAF_ERR_TRAINING: return "training";
    case KAF_ERR_CONFIG: return "config";
    case KAF_ERR_IO: return "io";
    case KAF_ERR_DIVERGED: return "diverged";
    case KAF_ERR_NULL: return "null";
    case KAF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* kaf_last_error(void) { return g_last_error.c_str(); }
long kaf_last_divergence_step(void) { return g_divergence_step; }
void kaf_string_free(char* s) { std::free(s); }

kaf_status kaf_dataset_open(const char* request_json, kaf_dataset** out) {
  if (!out) return null_arg();
  *out = nullptr;
  return guard([&] {
    auto h = std::make_unique<kaf_dataset>();
    h->ds = open_dataset(request_from_json(parse(request_json)));
    *out = h.release();
  });
}

void kaf_dataset_free(kaf_dataset* ds) { delete ds; }

kaf_status kaf_dataset_size(const kaf_dataset* ds, size_t* n) {
  if (!ds || !n) return null_arg();
  *n = ds->ds.size();
  return KAF_OK;
}

kaf_status kaf_dataset_info(const kaf_dataset* ds, char** out) {
  if (!ds || !out) return null_arg();
  return guard([&] {
    json counts = json::object();
    for (const auto& [cls, n] : ds->ds.class_counts()) counts[std::to_string(cls)] = n;
    const json j{{"name", ds->ds.name},
                 {"size", ds->ds.size()},
                 {"height", ds->ds.height()},
                 {"width", ds->ds.width()},
                 {"class_counts", counts}};
    *out = dup_string(j.dump());
  });
}

kaf_status kaf_dataset_labels(const kaf_dataset* ds, int* labels, size_t capacity) {
  if (!ds || !labels) return null_arg();
  return guard([&] {
    require(capacity >= ds->ds.size(), ErrorKind::parameter, "label buffer too small");
    std::copy(ds->ds.labels.begin(), ds->ds.labels.end(), labels);
  });
}

kaf_status kaf_model_create(const char* config_json, kaf_model** out) {
  if (!out) return null_arg();
  *out = nullptr;
  return guard([&] {
    const TrainConfig cfg = config_from_json(parse(config_json));
    validate(cfg);
    auto h = std::make_unique<kaf_model>();
    h->net = Network(named_spec(cfg.model, cfg.activation, cfg.kaf));
    h->net.initialize(cfg.seed);
    h->seed = cfg.seed;
    h->record.config = to_json(cfg);
    h->record.seed = cfg.seed;
    *out = h.release();
  });
}

kaf_status kaf_train(const kaf_dataset* ds, const char* config_json, kaf_progress_fn progress,
                     void* user, kaf_model** out) {
  if (!ds || !out) return null_arg();
  *out = nullptr;
  return guard([&] {
    const TrainConfig cfg = config_from_json(parse(config_json));
    Progress cb;
    if (progress) cb = [&](int epoch, double loss, const Network&) { progress(epoch, loss, user); };
    auto h = std::make_unique<kaf_model>();
    h->seed = cfg.seed;
    if (cfg.model == "matching") {
      auto run = train_matching(ds->ds, cfg, cb);
      h->net = std::move(run.model);
      h->record = std::move(run.record);
    } else {
      auto run = train_siamese(ds->ds, cfg, cb);
      h->net = std::move(run.model.network());
      h->record = std::move(run.record);
    }
    *out = h.release();
  });
}

void kaf_model_free(kaf_model* model) { delete model; }

kaf_status kaf_model_save(const kaf_model* model, const char* path) {
  if (!model || !path) return null_arg();
  return guard([&] { save_checkpoint(path, model->net, model->seed, model->record.config); });
}

kaf_status kaf_model_load(const char* path, kaf_model** out) {
  if (!path || !out) return null_arg();
  *out = nullptr;
  return guard([&] {
    Checkpoint ck = load_checkpoint(path);
    auto h = std::make_unique<kaf_model>();
    h->net = std::move(ck.network);
    h->seed = ck.seed;
    h->record.config = std::move(ck.config);
    h->record.seed = ck.seed;
    *out = h.release();
  });
}

kaf_status kaf_model_spec(const kaf_model* model, char** out) {
  if (!model || !out) return null_arg();
  return guard([&] { *out = dup_string(spec_to_json(model->net.spec()).dump()); });
}

kaf_status kaf_model_embedding_dim(const kaf_model* model, size_t* dim) {
  if (!model || !dim) return null_arg();
  *dim = model->net.spec().embedding_dim;
  return KAF_OK;
}

kaf_status kaf_model_parameter_count(const kaf_model* model, size_t* count) {
  if (!model || !count) return null_arg();
  *count = model->net.parameter_count();
  return KAF_OK;
}

kaf_status kaf_model_set_metric(kaf_model* model, const char* key, double value) {
  if (!model || !key) return null_arg();
  return guard([&] { model->record.metrics[key] = value; });
}

kaf_status kaf_model_record(const kaf_model* model, char** out) {
  if (!model || !out) return null_arg();
  return guard([&] { *out = dup_string(record_json(model->record).dump()); });
}

kaf_status kaf_model_write_run(const kaf_model* model, const char* dir) {
  if (!model || !dir) return null_arg();
  return guard([&] {
    const std::filesystem::path d(dir);
    require(std::filesystem::is_directory(d), ErrorKind::io, d.string() + " is not a directory");
    write_loss_curve(d / "loss_curve.csv", model->record);
    write_metrics(d / "metrics.json", model->record);
  });
}

kaf_status kaf_model_embed(const kaf_model* model, const double* images, size_t n, size_t height,
                           size_t width, double* out) {
  if (!model || !images || !out) return null_arg();
  return guard([&] {
    const Tensor e = model->net.forward(to_images(images, n, height, width));
    std::copy(e.values().begin(), e.values().end(), out);
  });
}

kaf_status kaf_eval_silhouette(const kaf_model* model, const kaf_dataset* ds, double* score) {
  if (!model || !ds || !score) return null_arg();
  return guard([&] { *score = eval_silhouette(network_embedder(model->net), ds->ds); });
}

kaf_status kaf_eval_oneshot(const kaf_model* model, const kaf_dataset* ds, size_t ways,
                            size_t shots, size_t trials, uint64_t seed, double* accuracy) {
  if (!model || !ds || !accuracy) return null_arg();
  return guard([&] {
    *accuracy = eval_oneshot(network_embedder(model->net), ds->ds, ways, trials, seed, shots);
  });
}

kaf_status kaf_write_embeddings(const kaf_model* model, const kaf_dataset* ds, const char* path) {
  if (!model || !ds || !path) return null_arg();
  return guard([&] {
    write_embeddings_csv(path, embed_all(network_embedder(model->net), ds->ds), ds->ds.labels);
  });
}

kaf_status kaf_write_similarity(const kaf_model* model, const kaf_dataset* ds, size_t pairs,
                                uint64_t seed, const char* path, const char* pairs_path) {
  if (!model || !ds || !path) return null_arg();
  return guard([&] {
    const PairBatch pb = sample_pairs(ds->ds, pairs, seed);
    const auto scores = similarity_report(model->net, pb.x1, pb.x2);
    write_similarity_csv(path, scores);
    if (pairs_path) {
      std::ofstream out(pairs_path, std::ios::binary | std::ios::trunc);
      require(static_cast<bool>(out), ErrorKind::io, std::string("cannot write ") + pairs_path);
      out << "pair_id,first,second,y\n";
      for (std::size_t i = 0; i < pb.indices.size(); ++i)
        out << i << ',' << pb.indices[i].first << ',' << pb.indices[i].second << ','
            << static_cast<int>(pb.y[i]) << '\n';
    }
  });
}

kaf_status kaf_gradcheck(int seeds, uint64_t base_seed, const char* corrupt, char** report_json,
                         int* passed) {
  if (!passed) return null_arg();
  return guard([&] {
    GradcheckOptions opts;
    opts.seeds = seeds;
    opts.base_seed = base_seed;
    if (corrupt) opts.corrupt = corrupt;
    const GradcheckReport report = run_gradcheck(opts);
    *passed = report.passed() ? 1 : 0;
    if (report_json) {
      json entries = json::array();
      for (const auto& e : report.entries) {
        entries.push_back({{"name", e.name},
                           {"max_rel_error", e.max_rel_error},
                           {"passed", e.passed},
                           {"elements", e.elements},
                           {"worst_seed", e.worst_seed},
                           {"worst_tensor", e.worst_tensor},
                           {"worst_index", e.worst_index},
                           {"worst_analytic", e.worst_analytic},
                           {"worst_numeric", e.worst_numeric}});
      }
      const json j{{"passed", report.passed()},
                   {"tolerance", opts.tolerance},
                   {"seeds", seeds},
                   {"entries", entries}};
      *report_json = dup_string(j.dump());
    }
  });
}

kaf_status kaf_psdcheck(int dictionary_size, double bound, double gamma, int two_d,
                        double* lambda_min) {
  if (!lambda_min) return null_arg();
  return guard([&] {
    const Dictionary d = make_dictionary(dictionary_size, bound);
    const KafParams p(d.points, gamma > 0 ? gamma : d.gamma,
                      two_d ? KafVariant::two_d : KafVariant::one_d);
    *lambda_min = psd_check(p);
  });
}

}  // extern "C"
