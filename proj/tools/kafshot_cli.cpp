// kafshot command line: training, evaluation, exports and numerical checks.
// Everything goes through the C interface in kafshot/kafshot.h.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kafshot/kafshot.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 1, kDiverged = 2, kCheckFailed = 3 };

// Carries an exit code out of a command body.
struct Failure {
  int code;
  std::string message;
};

void check(kaf_status s, const std::string& what) {
  if (s == KAF_OK) return;
  const int code = s == KAF_ERR_DIVERGED ? kDiverged : kConfig;
  throw Failure{code, what + ": " + kaf_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  kaf_string_free(s);
  return out;
}

struct DatasetHandle {
  kaf_dataset* p = nullptr;
  ~DatasetHandle() { kaf_dataset_free(p); }
};

struct ModelHandle {
  kaf_model* p = nullptr;
  ~ModelHandle() { kaf_model_free(p); }
};

// Keys of the flat config document that describe the data rather than the run.
const std::vector<std::string> kDataKeys = {"data_dir", "split", "data_seed", "classes",
                                            "per_class", "noise", "first_class"};

struct Options {
  std::string config_path;
  // run configuration; unset values fall through to the config file, then
  // to the library defaults
  std::optional<std::string> dataset, data_dir, split, activation, model, optimizer, kaf_init,
      alpha_mode;
  std::optional<int> epochs, batch, D, steps_per_epoch, nway, kshot, queries, classes,
      per_class, first_class;
  std::optional<double> lr, margin, bound, gamma, clip, noise;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> subset;
  std::string out = "run";
  std::string checkpoint;
  // evaluation
  std::size_t trials = 1000;
  std::size_t pairs = 32;
  bool untrained = false;
};

void add_data_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags override its values")
      ->check(CLI::ExistingFile);
  cmd->add_option("--dataset", o.dataset, "mnist, att, omniglot or synthetic [synthetic]")
      ->check(CLI::IsMember({"mnist", "att", "omniglot", "synthetic"}));
  cmd->add_option("--data-dir", o.data_dir, "dataset root directory");
  cmd->add_option("--split", o.split,
                  "train|test (mnist, synthetic), background|evaluation (omniglot)");
  cmd->add_option("--subset", o.subset, "seeded subset size, 0 keeps all [500]");
  cmd->add_option("--data-seed", o.data_seed, "seed for subsets and synthetic images [0]");
  cmd->add_option("--classes", o.classes, "synthetic class count [10]");
  cmd->add_option("--per-class", o.per_class, "synthetic images per class [20]");
  cmd->add_option("--noise", o.noise, "synthetic pixel noise std [0.05]");
  cmd->add_option("--first-class", o.first_class, "first synthetic class id [0]");
}

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--model", o.model, "mnist, att or matching [by dataset]")
      ->check(CLI::IsMember({"mnist", "att", "matching"}));
  cmd->add_option("--activation", o.activation, "relu, kaf or kaf2d [relu]")
      ->check(CLI::IsMember({"relu", "kaf", "kaf2d"}));
  cmd->add_option("--D", o.D, "KAF dictionary size [20]");
  cmd->add_option("--bound", o.bound, "dictionary range [-bound, bound] [3]");
  cmd->add_option("--gamma", o.gamma, "kernel bandwidth [1/(2 spacing^2)]");
  cmd->add_option("--alpha", o.alpha_mode, "per-channel or shared KAF mixtures [per-channel]")
      ->check(CLI::IsMember({"per-channel", "shared"}));
  cmd->add_option("--kaf-init", o.kaf_init, "random or elu [random]")
      ->check(CLI::IsMember({"random", "elu"}));
  cmd->add_option("--seed", o.seed, "initialisation and sampling seed [0]");
}

void add_train_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--epochs", o.epochs, "training epochs [10]");
  cmd->add_option("--lr", o.lr, "learning rate [0.0005]");
  cmd->add_option("--margin", o.margin, "contrastive margin [2]");
  cmd->add_option("--batch", o.batch, "pairs per step [32]");
  cmd->add_option("--optimizer", o.optimizer, "adam or sgd [adam]")
      ->check(CLI::IsMember({"adam", "sgd"}));
  cmd->add_option("--clip", o.clip, "global gradient-norm clip, 0 disables [5]");
  cmd->add_option("--steps-per-epoch", o.steps_per_epoch, "0 derives it from the data size [0]");
  cmd->add_option("--nway", o.nway, "episode classes [5]");
  cmd->add_option("--kshot", o.kshot, "supports per class [1]");
  cmd->add_option("--queries", o.queries, "queries per training episode [5]");
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

// Flags over file over defaults. Returns {run config, dataset request}.
std::pair<json, json> resolve(const Options& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw Failure{kConfig, "cannot parse " + o.config_path + ": " + e.what()};
    }
    if (!doc.is_object()) throw Failure{kConfig, o.config_path + " must hold a JSON object"};
  }
  put(doc, "dataset", o.dataset);
  put(doc, "data_dir", o.data_dir);
  put(doc, "split", o.split);
  put(doc, "subset", o.subset);
  put(doc, "data_seed", o.data_seed);
  put(doc, "classes", o.classes);
  put(doc, "per_class", o.per_class);
  put(doc, "noise", o.noise);
  put(doc, "first_class", o.first_class);
  put(doc, "model", o.model);
  put(doc, "activation", o.activation);
  put(doc, "D", o.D);
  put(doc, "bound", o.bound);
  put(doc, "gamma", o.gamma);
  if (o.alpha_mode) doc["per_channel"] = *o.alpha_mode == "per-channel";
  put(doc, "kaf_init", o.kaf_init);
  put(doc, "seed", o.seed);
  put(doc, "epochs", o.epochs);
  put(doc, "lr", o.lr);
  put(doc, "margin", o.margin);
  put(doc, "batch", o.batch);
  put(doc, "optimizer", o.optimizer);
  put(doc, "clip_norm", o.clip);
  put(doc, "steps_per_epoch", o.steps_per_epoch);
  put(doc, "nway", o.nway);
  put(doc, "kshot", o.kshot);
  put(doc, "queries", o.queries);

  if (!doc.contains("dataset")) doc["dataset"] = "synthetic";
  const std::string kind = doc["dataset"].get<std::string>();
  if (!doc.contains("model")) {
    doc["model"] = kind == "att" ? "att" : kind == "omniglot" ? "matching" : "mnist";
  }

  json data = json::object();
  data["kind"] = kind;
  for (const auto& key : kDataKeys) {
    if (!doc.contains(key)) continue;
    const std::string target = key == "data_dir" ? "dir" : key == "data_seed" ? "seed" : key;
    data[target] = doc[key];
    doc.erase(key);
  }
  if (doc.contains("subset")) data["subset"] = doc["subset"];
  else data["subset"] = 500;
  if (doc["model"] == "att") data["extent"] = 100;
  else if (kind != "mnist") data["extent"] = 28;
  return {doc, data};
}

json spec_of(const kaf_model* m) {
  char* s = nullptr;
  check(kaf_model_spec(m, &s), "reading model spec");
  return json::parse(take(s));
}

// Dataset request for evaluating an existing model: image extent follows the
// model input, the split defaults to the held-out one.
json eval_request(const Options& o, const kaf_model* m, const char* default_split) {
  json data = resolve(o).second;
  const json spec = spec_of(m);
  if (data["kind"] != "mnist") data["extent"] = spec["input"][1];
  if (!data.contains("split")) {
    const std::string kind = data["kind"];
    data["split"] = kind == "att" ? "train" : kind == "omniglot" ? "evaluation" : default_split;
  }
  return data;
}

void open_dataset(const json& request, DatasetHandle& ds) {
  check(kaf_dataset_open(request.dump().c_str(), &ds.p), "loading dataset");
}

std::string dataset_info(const kaf_dataset* ds) {
  char* s = nullptr;
  check(kaf_dataset_info(ds, &s), "describing dataset");
  return take(s);
}

void load_model(const Options& o, ModelHandle& m) {
  if (o.checkpoint.empty()) throw Failure{kConfig, "--checkpoint is required"};
  if (!fs::exists(o.checkpoint)) throw Failure{kConfig, "checkpoint " + o.checkpoint + " not found"};
  check(kaf_model_load(o.checkpoint.c_str(), &m.p), "loading checkpoint");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Failure{kConfig, "cannot create directory " + dir};
}

int cmd_train(const Options& o) {
  auto [cfg, data] = resolve(o);
  if (!data.contains("split")) data["split"] = data["kind"] == "omniglot" ? "background" : "train";
  DatasetHandle ds;
  open_dataset(data, ds);
  std::cerr << "dataset " << dataset_info(ds.p) << "\n";

  ModelHandle m;
  auto progress = [](int epoch, double loss, void*) {
    std::fprintf(stderr, "epoch %d mean_loss %.6f\n", epoch + 1, loss);
  };
  check(kaf_train(ds.p, cfg.dump().c_str(), progress, nullptr, &m.p), "training");

  double metric = 0.0;
  if (cfg["model"] == "matching") {
    const auto ways = static_cast<std::size_t>(cfg.value("nway", 5));
    const auto shots = static_cast<std::size_t>(cfg.value("kshot", 1));
    check(kaf_eval_oneshot(m.p, ds.p, ways, shots, o.trials, cfg.value("seed", 0ULL), &metric),
          "evaluating");
    check(kaf_model_set_metric(m.p, "train_oneshot_accuracy", metric), "recording metric");
  } else {
    check(kaf_eval_silhouette(m.p, ds.p, &metric), "evaluating");
    check(kaf_model_set_metric(m.p, "train_silhouette", metric), "recording metric");
  }

  ensure_dir(o.out);
  const std::string ckpt = o.checkpoint.empty() ? (fs::path(o.out) / "model.kafshot").string()
                                                : o.checkpoint;
  check(kaf_model_save(m.p, ckpt.c_str()), "saving checkpoint");
  check(kaf_model_write_run(m.p, o.out.c_str()), "writing run record");
  std::cout << "wrote " << ckpt << ", " << (fs::path(o.out) / "loss_curve.csv").string() << ", "
            << (fs::path(o.out) / "metrics.json").string() << "\n";
  return kOk;
}

int cmd_eval_silhouette(const Options& o) {
  ModelHandle m;
  load_model(o, m);
  DatasetHandle ds;
  open_dataset(eval_request(o, m.p, "test"), ds);
  double score = 0.0;
  check(kaf_eval_silhouette(m.p, ds.p, &score), "silhouette");
  const json report{{"silhouette", score}, {"dataset", json::parse(dataset_info(ds.p))}};
  std::cout << report.dump() << "\n";
  return kOk;
}

int cmd_eval_oneshot(const Options& o) {
  ModelHandle m;
  if (o.untrained) {
    json cfg = resolve(o).first;
    cfg["model"] = o.model.value_or("matching");
    check(kaf_model_create(cfg.dump().c_str(), &m.p), "building untrained model");
  } else {
    load_model(o, m);
  }
  DatasetHandle ds;
  open_dataset(eval_request(o, m.p, "test"), ds);
  const auto ways = static_cast<std::size_t>(o.nway.value_or(5));
  const auto shots = static_cast<std::size_t>(o.kshot.value_or(1));
  double acc = 0.0;
  check(kaf_eval_oneshot(m.p, ds.p, ways, shots, o.trials, o.seed.value_or(0), &acc),
        "one-shot evaluation");
  const json report{{"accuracy", acc},
                    {"nway", ways},
                    {"kshot", shots},
                    {"trials", o.trials},
                    {"dataset", json::parse(dataset_info(ds.p))}};
  std::cout << report.dump() << "\n";
  return kOk;
}

int cmd_embed(const Options& o) {
  ModelHandle m;
  load_model(o, m);
  DatasetHandle ds;
  open_dataset(eval_request(o, m.p, "test"), ds);
  ensure_dir(o.out);
  const std::string path = (fs::path(o.out) / "embeddings.csv").string();
  check(kaf_write_embeddings(m.p, ds.p, path.c_str()), "writing embeddings");
  std::cout << "wrote " << path << "\n";
  return kOk;
}

int cmd_similarity(const Options& o) {
  ModelHandle m;
  load_model(o, m);
  DatasetHandle ds;
  open_dataset(eval_request(o, m.p, "test"), ds);
  ensure_dir(o.out);
  const std::string path = (fs::path(o.out) / "similarity.csv").string();
  const std::string pairs = (fs::path(o.out) / "pairs.csv").string();
  check(kaf_write_similarity(m.p, ds.p, o.pairs, o.seed.value_or(0), path.c_str(), pairs.c_str()),
        "similarity report");
  std::cout << "wrote " << path << " and " << pairs << "\n";
  return kOk;
}

int cmd_gradcheck(int seeds, std::uint64_t base_seed, const std::string& corrupt, bool as_json) {
  char* report = nullptr;
  int passed = 0;
  check(kaf_gradcheck(seeds, base_seed, corrupt.empty() ? nullptr : corrupt.c_str(), &report,
                      &passed),
        "gradcheck");
  const json r = json::parse(take(report));
  if (as_json) {
    std::cout << r.dump(2) << "\n";
  } else {
    for (const auto& e : r["entries"]) {
      const double err = e["max_rel_error"].is_number() ? e["max_rel_error"].get<double>() : INFINITY;
      std::printf("%-13s max_rel_error %.3e  %s", e["name"].get<std::string>().c_str(), err,
                  e["passed"].get<bool>() ? "ok" : "FAIL");
      if (!e["passed"].get<bool>()) {
        std::printf("  worst %s[%zu] seed %llu analytic %.9g numeric %.9g",
                    e["worst_tensor"].get<std::string>().c_str(), e["worst_index"].get<std::size_t>(),
                    static_cast<unsigned long long>(e["worst_seed"].get<std::uint64_t>()),
                    e["worst_analytic"].get<double>(), e["worst_numeric"].get<double>());
      }
      std::printf("\n");
    }
    std::printf("%d seeds, tolerance %.0e: %s\n", seeds, r["tolerance"].get<double>(),
                passed ? "passed" : "FAILED");
  }
  return passed ? kOk : kCheckFailed;
}

std::vector<int> parse_sizes(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 1)
      throw Failure{kConfig, "invalid dictionary size '" + item + "' in --D list"};
    out.push_back(v);
  }
  if (out.empty()) throw Failure{kConfig, "--D list is empty"};
  return out;
}

int cmd_psdcheck(const std::string& sizes, double bound, double gamma, bool two_d) {
  bool ok = true;
  for (int d : parse_sizes(sizes)) {
    double lmin = 0.0;
    check(kaf_psdcheck(d, bound, gamma, two_d ? 1 : 0, &lmin), "psdcheck");
    const bool pass = lmin >= -1e-8;
    ok = ok && pass;
    std::printf("D=%d lambda_min=%.6e %s\n", d, lmin, pass ? "ok" : "VIOLATION");
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel activation functions for one-shot metric learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kaf_version());
  Options o;

  auto* train = app.add_subcommand("train", "train a Siamese or matching model");
  add_data_flags(train, o);
  add_model_flags(train, o);
  add_train_flags(train, o);
  train->add_option("--checkpoint", o.checkpoint, "checkpoint path [<out>/model.kafshot]");
  train->add_option("--trials", o.trials, "episodes for the matching training metric")
      ->capture_default_str();

  auto* sil = app.add_subcommand("eval-silhouette", "silhouette of a model's embeddings");
  add_data_flags(sil, o);
  sil->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();

  auto* oneshot = app.add_subcommand("eval-oneshot", "N-way K-shot accuracy of the matching head");
  add_data_flags(oneshot, o);
  oneshot->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  oneshot->add_flag("--untrained", o.untrained,
                    "evaluate a freshly initialised model built from --model/--activation/--seed");
  oneshot->add_option("--model", o.model, "architecture for --untrained [matching]")
      ->check(CLI::IsMember({"mnist", "att", "matching"}));
  oneshot->add_option("--activation", o.activation, "activation for --untrained [relu]")
      ->check(CLI::IsMember({"relu", "kaf", "kaf2d"}));
  oneshot->add_option("--seed", o.seed, "episode and initialisation seed [0]");
  oneshot->add_option("--nway", o.nway, "classes per episode [5]");
  oneshot->add_option("--kshot", o.kshot, "supports per class [1]");
  oneshot->add_option("--trials", o.trials, "episodes")->capture_default_str();

  auto* embed = app.add_subcommand("embed", "write embeddings.csv for a dataset split");
  add_data_flags(embed, o);
  embed->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  embed->add_option("--out", o.out, "output directory")->capture_default_str();

  auto* sim = app.add_subcommand("similarity", "pairwise dissimilarity scores");
  add_data_flags(sim, o);
  sim->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  sim->add_option("--pairs", o.pairs, "number of balanced pairs")->capture_default_str();
  sim->add_option("--seed", o.seed, "pair sampling seed [0]");
  sim->add_option("--out", o.out, "output directory")->capture_default_str();

  int gc_seeds = 20;
  std::uint64_t gc_base = 0;
  std::string gc_corrupt;
  bool gc_json = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  gc->add_option("--seeds", gc_seeds, "random instances per layer kind")->capture_default_str();
  gc->add_option("--seed", gc_base, "first seed")->capture_default_str();
  gc->add_flag("--json", gc_json, "print the full report as JSON");
  gc->add_option("--corrupt-gradient", gc_corrupt, "")->group("");  // test hook

  std::string psd_sizes = "2,5,10,20";
  double psd_bound = 3.0, psd_gamma = 0.0;
  bool psd_2d = false;
  auto* psd = app.add_subcommand("psdcheck", "smallest Gram-matrix eigenvalue per dictionary size");
  psd->add_option("--D", psd_sizes, "comma-separated dictionary sizes")->capture_default_str();
  psd->add_option("--bound", psd_bound, "dictionary range [-bound, bound]")->capture_default_str();
  psd->add_option("--gamma", psd_gamma, "bandwidth, <= 0 for 1/(2 spacing^2)")->capture_default_str();
  psd->add_flag("--two-d", psd_2d, "use the D x D grid of the 2-D variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(o);
    if (*sil) return cmd_eval_silhouette(o);
    if (*oneshot) {
      if (!o.untrained && o.checkpoint.empty())
        throw Failure{kConfig, "--checkpoint or --untrained is required"};
      return cmd_eval_oneshot(o);
    }
    if (*embed) return cmd_embed(o);
    if (*sim) return cmd_similarity(o);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_base, gc_corrupt, gc_json);
    if (*psd) return cmd_psdcheck(psd_sizes, psd_bound, psd_gamma, psd_2d);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
