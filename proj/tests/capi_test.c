/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "kafshot/kafshot.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static int epochs_seen = 0;

static void on_epoch(int epoch, double loss, void* user) {
  (void)user;
  EXPECT(epoch == epochs_seen);
  EXPECT(isfinite(loss));
  ++epochs_seen;
}

int main(int argc, char** argv) {
  const char* tmp = argc > 1 ? argv[1] : ".";
  char path[1024];
  kaf_dataset* ds = NULL;
  kaf_model* model = NULL;
  kaf_model* loaded = NULL;
  char* text = NULL;
  size_t n = 0, dim = 0, params = 0;
  double score = 0.0, acc = 0.0, lmin = 0.0;
  int passed = 0;

  EXPECT(strcmp(kaf_status_name(KAF_ERR_DIVERGED), "diverged") == 0);
  EXPECT(strlen(kaf_version()) > 0);

  /* argument and request errors */
  EXPECT(kaf_dataset_open("{}", NULL) == KAF_ERR_NULL);
  EXPECT(strlen(kaf_last_error()) > 0);
  EXPECT(kaf_dataset_open("{\"kind\": ", &ds) == KAF_ERR_CONFIG);
  EXPECT(ds == NULL);
  EXPECT(kaf_dataset_open("{\"kind\": \"synthetic\", \"colour\": 1}", &ds) == KAF_ERR_CONFIG);
  EXPECT(strstr(kaf_last_error(), "colour") != NULL);
  EXPECT(kaf_dataset_open("{\"kind\": \"mnist\", \"dir\": \"/nonexistent\"}", &ds) == KAF_ERR_IO);
  EXPECT(kaf_model_create("{\"activation\": \"swish\"}", &model) == KAF_ERR_CONFIG);

  EXPECT(kaf_dataset_open("{\"kind\": \"synthetic\", \"classes\": 3, \"per_class\": 6}", &ds) ==
         KAF_OK);
  EXPECT(kaf_dataset_size(ds, &n) == KAF_OK && n == 18);
  EXPECT(kaf_dataset_info(ds, &text) == KAF_OK);
  EXPECT(strstr(text, "\"class_counts\":{\"0\":6,\"1\":6,\"2\":6}") != NULL);
  kaf_string_free(text);
  {
    int labels[18];
    EXPECT(kaf_dataset_labels(ds, labels, 17) == KAF_ERR_PARAMETER);
    EXPECT(kaf_dataset_labels(ds, labels, 18) == KAF_OK && labels[17] == 2);
  }

  EXPECT(kaf_train(ds,
                   "{\"activation\": \"kaf\", \"D\": 6, \"epochs\": 2, \"batch\": 8, "
                   "\"steps_per_epoch\": 2, \"seed\": 3}",
                   on_epoch, NULL, &model) == KAF_OK);
  EXPECT(epochs_seen == 2);
  EXPECT(kaf_model_embedding_dim(model, &dim) == KAF_OK && dim == 2);
  EXPECT(kaf_model_parameter_count(model, &params) == KAF_OK && params == 427072 + 500 * 6);
  EXPECT(kaf_eval_silhouette(model, ds, &score) == KAF_OK && score >= -1.0 && score <= 1.0);
  EXPECT(kaf_eval_oneshot(model, ds, 3, 1, 50, 1, &acc) == KAF_OK && acc >= 0.0 && acc <= 1.0);
  EXPECT(kaf_eval_oneshot(model, ds, 4, 1, 50, 1, &acc) == KAF_ERR_SAMPLING);
  EXPECT(kaf_model_set_metric(model, "extra", 1.5) == KAF_OK);
  EXPECT(kaf_model_record(model, &text) == KAF_OK);
  EXPECT(strstr(text, "\"extra\":1.5") != NULL);
  kaf_string_free(text);

  snprintf(path, sizeof path, "%s/capi.kafshot", tmp);
  EXPECT(kaf_model_save(model, path) == KAF_OK);
  EXPECT(kaf_model_load(path, &loaded) == KAF_OK);
  {
    double img[2 * 28 * 28];
    double e1[4], e2[4];
    int i;
    for (i = 0; i < 2 * 28 * 28; ++i) img[i] = (i % 29) / 29.0;
    EXPECT(kaf_model_embed(model, img, 2, 28, 28, e1) == KAF_OK);
    EXPECT(kaf_model_embed(loaded, img, 2, 28, 28, e2) == KAF_OK);
    EXPECT(memcmp(e1, e2, sizeof e1) == 0);
    EXPECT(kaf_model_embed(model, img, 2, 27, 29, e1) == KAF_ERR_DIMENSION);
  }
  EXPECT(kaf_model_spec(loaded, &text) == KAF_OK);
  EXPECT(strstr(text, "\"activation\":\"kaf\"") != NULL);
  kaf_string_free(text);
  EXPECT(kaf_model_load("/nonexistent/model.kafshot", &loaded) == KAF_ERR_IO);
  EXPECT(loaded == NULL);

  EXPECT(kaf_model_write_run(model, tmp) == KAF_OK);
  EXPECT(kaf_model_write_run(model, "/nonexistent/dir") == KAF_ERR_IO);
  snprintf(path, sizeof path, "%s/capi_embeddings.csv", tmp);
  EXPECT(kaf_write_embeddings(model, ds, path) == KAF_OK);

  /* divergence carries its step */
  EXPECT(kaf_train(ds,
                   "{\"optimizer\": \"sgd\", \"lr\": 1e150, \"clip_norm\": 0, \"epochs\": 5, "
                   "\"batch\": 8, \"steps_per_epoch\": 4}",
                   NULL, NULL, &loaded) == KAF_ERR_DIVERGED);
  EXPECT(kaf_last_divergence_step() > 0);
  EXPECT(strstr(kaf_last_error(), "step") != NULL);

  EXPECT(kaf_psdcheck(1, 3.0, 0.0, 0, &lmin) == KAF_OK && lmin == 1.0);
  EXPECT(kaf_psdcheck(0, 3.0, 0.0, 0, &lmin) == KAF_ERR_PARAMETER);
  EXPECT(kaf_gradcheck(1, 0, NULL, NULL, &passed) == KAF_OK && passed == 1);
  EXPECT(kaf_gradcheck(1, 0, "linear", &text, &passed) == KAF_OK && passed == 0);
  kaf_string_free(text);
  EXPECT(kaf_gradcheck(1, 0, "nonsense", NULL, &passed) == KAF_ERR_CONFIG);

  kaf_model_free(model);
  kaf_dataset_free(ds);
  kaf_model_free(NULL);
  kaf_dataset_free(NULL);

  if (failures) {
    fprintf(stderr, "%d C API check(s) failed\n", failures);
    return 1;
  }
  printf("C API checks passed\n");
  return 0;
}
