#ifndef KAFSHOT_H
#define KAFSHOT_H

/*
 * C interface to the kafshot library: kernel activation functions inside
 * Siamese and matching networks for one-shot learning.
 *
 * Every function returns a kaf_status. On failure the message of the most
 * recent error on the calling thread is available from kaf_last_error().
 * Handles are opaque and owned by the caller; release them with the matching
 * *_free function. Strings returned through char** are heap copies released
 * with kaf_string_free().
 *
 * Configuration crosses the boundary as JSON text. Dataset requests take the
 * keys kind, dir, split, subset, seed, extent, classes, per_class, noise and
 * first_class. Training configurations take the keys written to the config
 * section of metrics.json (model, activation, D, bound, gamma, per_channel,
 * kaf_init, dataset, subset, lr, epochs, batch, margin, seed, optimizer,
 * beta1, beta2, eps, clip_norm, steps_per_epoch, nway, kshot, queries).
 * Unknown keys are rejected.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KAF_API __declspec(dllexport)
#else
#define KAF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kaf_status {
  KAF_OK = 0,
  KAF_ERR_DIMENSION = 1,
  KAF_ERR_PARAMETER = 2,
  KAF_ERR_NUMERIC = 3,
  KAF_ERR_FORMAT = 4,
  KAF_ERR_SAMPLING = 5,
  KAF_ERR_STATE = 6,
  KAF_ERR_METRIC = 7,
  KAF_ERR_TRAINING = 8,
  KAF_ERR_CONFIG = 9,
  KAF_ERR_IO = 10,
  KAF_ERR_DIVERGED = 11, /* loss became non-finite; see kaf_last_divergence_step */
  KAF_ERR_NULL = 12,     /* a required pointer argument was NULL */
  KAF_ERR_INTERNAL = 13
} kaf_status;

typedef struct kaf_dataset kaf_dataset;
typedef struct kaf_model kaf_model;

/* Called after every training epoch. */
typedef void (*kaf_progress_fn)(int epoch, double mean_loss, void* user);

KAF_API const char* kaf_version(void);
KAF_API const char* kaf_status_name(kaf_status status);
/* Message of the last failure on this thread; "" if none. */
KAF_API const char* kaf_last_error(void);
/* Step index carried by the last KAF_ERR_DIVERGED on this thread, else -1. */
KAF_API long kaf_last_divergence_step(void);
KAF_API void kaf_string_free(char* s);

/* ---- datasets ---- */

KAF_API kaf_status kaf_dataset_open(const char* request_json, kaf_dataset** out);
KAF_API void kaf_dataset_free(kaf_dataset* ds);
KAF_API kaf_status kaf_dataset_size(const kaf_dataset* ds, size_t* n);
/* {"name", "size", "height", "width", "class_counts": {...}} */
KAF_API kaf_status kaf_dataset_info(const kaf_dataset* ds, char** json);
KAF_API kaf_status kaf_dataset_labels(const kaf_dataset* ds, int* labels, size_t capacity);

/* ---- models ---- */

/* Builds and initialises the named architecture (mnist, att or matching)
 * from a training configuration document, without training. */
KAF_API kaf_status kaf_model_create(const char* config_json, kaf_model** out);
/* Trains a Siamese model (model mnist or att) or a matching embedder (model
 * matching) on the dataset. `progress` may be NULL. */
KAF_API kaf_status kaf_train(const kaf_dataset* ds, const char* config_json,
                             kaf_progress_fn progress, void* user, kaf_model** out);
KAF_API void kaf_model_free(kaf_model* model);
KAF_API kaf_status kaf_model_save(const kaf_model* model, const char* path);
KAF_API kaf_status kaf_model_load(const char* path, kaf_model** out);
KAF_API kaf_status kaf_model_spec(const kaf_model* model, char** json);
KAF_API kaf_status kaf_model_embedding_dim(const kaf_model* model, size_t* dim);
KAF_API kaf_status kaf_model_parameter_count(const kaf_model* model, size_t* count);

/* Attaches an evaluation metric reported by kaf_model_write_run. */
KAF_API kaf_status kaf_model_set_metric(kaf_model* model, const char* key, double value);
/* Training record: {"config", "seed", "epoch_loss", "epoch_seconds", "metrics"}. */
KAF_API kaf_status kaf_model_record(const kaf_model* model, char** json);
/* Writes loss_curve.csv and metrics.json into an existing directory. */
KAF_API kaf_status kaf_model_write_run(const kaf_model* model, const char* dir);

/* Embeds images [n, 1, h, w] (row-major) into out[n * embedding_dim]. */
KAF_API kaf_status kaf_model_embed(const kaf_model* model, const double* images, size_t n,
                                   size_t height, size_t width, double* out);

/* ---- evaluation and exports ---- */

KAF_API kaf_status kaf_eval_silhouette(const kaf_model* model, const kaf_dataset* ds,
                                       double* score);
KAF_API kaf_status kaf_eval_oneshot(const kaf_model* model, const kaf_dataset* ds,
                                    size_t ways, size_t shots, size_t trials, uint64_t seed,
                                    double* accuracy);
/* embeddings.csv with header id,label,e0..e{E-1}, one row per image. */
KAF_API kaf_status kaf_write_embeddings(const kaf_model* model, const kaf_dataset* ds,
                                        const char* path);
/* Samples `pairs` balanced pairs and writes similarity.csv (pair_id,
 * dissimilarity) plus, when pairs_path is not NULL, the pair indices and
 * labels (pair_id,first,second,y). */
KAF_API kaf_status kaf_write_similarity(const kaf_model* model, const kaf_dataset* ds,
                                        size_t pairs, uint64_t seed, const char* path,
                                        const char* pairs_path);

/* ---- checks ---- */

/* Runs the finite-difference suite. `corrupt` names an entry whose analytic
 * gradient is deliberately perturbed (test hook) or is NULL. The report is
 * {"passed", "tolerance", "seeds", "entries": [...]}. */
KAF_API kaf_status kaf_gradcheck(int seeds, uint64_t base_seed, const char* corrupt,
                                 char** report_json, int* passed);
/* Smallest eigenvalue of the kernel Gram matrix over a D-point dictionary on
 * [-bound, bound]. gamma <= 0 selects 1 / (2 spacing^2). two_d selects the
 * D x D grid. */
KAF_API kaf_status kaf_psdcheck(int dictionary_size, double bound, double gamma, int two_d,
                                double* lambda_min);

#ifdef __cplusplus
}
#endif

#endif /* KAFSHOT_H */
