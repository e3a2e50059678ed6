/* C interface to the medssl library. Every function that can fail returns a
 * medssl_status; medssl_last_error() then describes the failure for the
 * calling thread. Strings returned by accessors are owned by their handle. */
#ifndef MEDSSL_MEDSSL_H
#define MEDSSL_MEDSSL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MEDSSL_API __declspec(dllexport)
#else
#define MEDSSL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum medssl_status {
  MEDSSL_OK = 0,
  MEDSSL_INVALID_INPUT = 1,
  MEDSSL_SHAPE_ERROR = 2,
  MEDSSL_CONFIG_ERROR = 3,
  MEDSSL_NUMERICAL_ERROR = 4,
  MEDSSL_MANIFEST_ERROR = 5,
  MEDSSL_LABEL_ERROR = 6,
  MEDSSL_IO_ERROR = 7,
  MEDSSL_INTERNAL_ERROR = 8
} medssl_status;

MEDSSL_API const char* medssl_version(void);
MEDSSL_API const char* medssl_last_error(void);
MEDSSL_API const char* medssl_status_name(medssl_status status);
/* Process exit code for a status: 0 ok, 2 usage/config/input, 3 numerical. */
MEDSSL_API int medssl_exit_code(medssl_status status);

/* ---- synthetic corpus -------------------------------------------------- */

typedef struct medssl_synth_options {
  const char* out_dir;
  const char* modalities; /* comma-separated tags, e.g. "xray,ct" */
  int categories;
  int samples_per_cell;   /* per (modality, category) */
  const char* body_parts; /* comma-separated canonical keys */
  double noise_level;
  uint64_t seed;
  int image_size;
} medssl_synth_options;

MEDSSL_API void medssl_synth_options_init(medssl_synth_options* opt);
/* Writes samples/, manifest.tsv and body_part_map.tsv under out_dir. */
MEDSSL_API medssl_status medssl_synth(const medssl_synth_options* opt, size_t* sample_count);

/* ---- pretraining ------------------------------------------------------- */

typedef struct medssl_pretrain_options {
  const char* objective; /* "mae" or "simdino" */
  const char* manifest;
  const char* out_dir;
  int steps;
  int batch_size;
  uint64_t seed;
  double lr;
  double warmup_fraction;
  double weight_decay;

  int embed_dim;
  int depth;
  int heads;
  double mlp_ratio;
  int patch[4]; /* c, h, w, s */
  int max_tokens; /* 0: derived from the manifest */

  int decoder_width; /* 0: embed_dim / 2 */
  int decoder_depth;
  int decoder_heads;
  int head_hidden; /* 0: embed_dim */
  int head_out;    /* 0: embed_dim */
  int projection_head;

  double mask_ratio;
  double epsilon;
  int normalize;
  const char* covariance_views; /* "globals" or "all" */
  int n_local;                  /* -1: per-modality default */
  double global_scale[2];
  double local_scale[2];
  int local_out[3]; /* h, w, s; 0: derived */

  const char* holdout; /* comma-separated modality tags, may be empty */
  double data_fraction;
  int checkpoint_every;
} medssl_pretrain_options;

typedef struct medssl_pretrain_result {
  int steps;
  size_t parameters;
  double first_loss;
  double last_loss;
} medssl_pretrain_result;

MEDSSL_API void medssl_pretrain_options_init(medssl_pretrain_options* opt);
/* Writes model.ckpt and train_log.csv under out_dir. */
MEDSSL_API medssl_status medssl_pretrain(const medssl_pretrain_options* opt, medssl_pretrain_result* result);

/* ---- models ------------------------------------------------------------ */

typedef struct medssl_model medssl_model;

MEDSSL_API medssl_status medssl_model_load(const char* checkpoint, medssl_model** out);
MEDSSL_API void medssl_model_free(medssl_model* model);
MEDSSL_API size_t medssl_model_parameter_count(const medssl_model* model);
MEDSSL_API const char* medssl_model_config_json(const medssl_model* model);
/* Embeds one sample file with strategy "avg", "cls" or "mix". Writes at most
 * `capacity` values and stores the full dimension in `dim`. */
MEDSSL_API medssl_status medssl_model_embed_file(const medssl_model* model, const char* sample_path,
                                                 const char* strategy, double* out, size_t capacity, size_t* dim);

/* ---- embeddings -------------------------------------------------------- */

typedef struct medssl_embed_options {
  const char* checkpoint;
  const char* manifest;
  const char* output;
  const char* strategy; /* NULL or "": follows the objective */
  int oracle;           /* synthetic corpora only; ignores checkpoint */
} medssl_embed_options;

MEDSSL_API void medssl_embed_options_init(medssl_embed_options* opt);
MEDSSL_API medssl_status medssl_embed(const medssl_embed_options* opt, size_t* count, int* dim);

typedef struct medssl_embeddings medssl_embeddings;

MEDSSL_API medssl_status medssl_embeddings_load(const char* path, medssl_embeddings** out);
MEDSSL_API void medssl_embeddings_free(medssl_embeddings* e);
MEDSSL_API size_t medssl_embeddings_count(const medssl_embeddings* e);
MEDSSL_API int medssl_embeddings_dim(const medssl_embeddings* e);
MEDSSL_API const char* medssl_embeddings_id(const medssl_embeddings* e, size_t index);
MEDSSL_API const char* medssl_embeddings_modality(const medssl_embeddings* e, size_t index);
MEDSSL_API medssl_status medssl_embeddings_vector(const medssl_embeddings* e, size_t index, double* out,
                                                  size_t capacity);

/* ---- retrieval evaluation --------------------------------------------- */

typedef struct medssl_eval_options {
  const char* embeddings;
  const char* rule; /* category, regional, lesion, crossmodal */
  const int* ks;    /* NULL: from the embedding index, else 1,5,10 */
  size_t k_count;
  const char* body_part_map; /* required by crossmodal */
  int regional_any;
  int lesion_bucket_mm;
  int labeled_only;
  const char* query_modalities;   /* comma-separated; empty: all */
  const char* gallery_modalities; /* comma-separated; empty: all */
} medssl_eval_options;

typedef struct medssl_report medssl_report;

MEDSSL_API void medssl_eval_options_init(medssl_eval_options* opt);
MEDSSL_API medssl_status medssl_eval(const medssl_eval_options* opt, medssl_report** out);
MEDSSL_API void medssl_report_free(medssl_report* r);
MEDSSL_API const char* medssl_report_json(const medssl_report* r);
MEDSSL_API const char* medssl_report_table(const medssl_report* r);
/* NaN when k was not evaluated. */
MEDSSL_API double medssl_report_recall(const medssl_report* r, int k);
MEDSSL_API double medssl_report_mnr(const medssl_report* r);
MEDSSL_API double medssl_report_mdr(const medssl_report* r);
MEDSSL_API int medssl_report_query_count(const medssl_report* r);
MEDSSL_API int medssl_report_skipped(const medssl_report* r);

/* ---- gradient check ---------------------------------------------------- */

typedef struct medssl_gradcheck_options {
  const char* objective;
  uint64_t seed;
  int embed_dim;
  int depth;
  int heads;
  int batch;
  double h;
  double tolerance;
  int corrupt_gradient; /* test hook: doubles the analytic gradient */
} medssl_gradcheck_options;

typedef struct medssl_gradcheck_report medssl_gradcheck_report;

MEDSSL_API void medssl_gradcheck_options_init(medssl_gradcheck_options* opt);
/* Returns MEDSSL_OK whenever the check ran; inspect ..._passed. */
MEDSSL_API medssl_status medssl_gradcheck(const medssl_gradcheck_options* opt, medssl_gradcheck_report** out);
MEDSSL_API void medssl_gradcheck_report_free(medssl_gradcheck_report* r);
MEDSSL_API int medssl_gradcheck_passed(const medssl_gradcheck_report* r);
MEDSSL_API double medssl_gradcheck_max_error(const medssl_gradcheck_report* r);
MEDSSL_API size_t medssl_gradcheck_block_count(const medssl_gradcheck_report* r);
MEDSSL_API const char* medssl_gradcheck_block_name(const medssl_gradcheck_report* r, size_t index);
MEDSSL_API double medssl_gradcheck_block_error(const medssl_gradcheck_report* r, size_t index);
MEDSSL_API const char* medssl_gradcheck_table(const medssl_gradcheck_report* r);

/* ---- scaling fits, probes --------------------------------------------- */

MEDSSL_API medssl_status medssl_fit_power_law(const double* x, const double* y, size_t n, double* a, double* b);

typedef struct medssl_scaling_report medssl_scaling_report;

/* Reads `x y` lines from a file. */
MEDSSL_API medssl_status medssl_scaling_fit_file(const char* path, medssl_scaling_report** out);
MEDSSL_API void medssl_scaling_report_free(medssl_scaling_report* r);
MEDSSL_API double medssl_scaling_a(const medssl_scaling_report* r);
MEDSSL_API double medssl_scaling_b(const medssl_scaling_report* r);
MEDSSL_API int medssl_scaling_monotone(const medssl_scaling_report* r);
MEDSSL_API const char* medssl_scaling_table(const medssl_scaling_report* r);
MEDSSL_API const char* medssl_scaling_json(const medssl_scaling_report* r);

MEDSSL_API medssl_status medssl_auroc(const double* scores, const int* labels, size_t n, double* out);

typedef struct medssl_probe_metrics {
  double f1;
  double precision;
  double accuracy;
  double auroc;
  size_t classes_used;
  size_t classes_excluded;
} medssl_probe_metrics;

/* Features are row-major n x dim; labels row-major n x n_classes of 0/1. */
MEDSSL_API medssl_status medssl_linear_probe(const double* train_x, const int* train_y, size_t n_train,
                                             const double* test_x, const int* test_y, size_t n_test, size_t dim,
                                             size_t n_classes, medssl_probe_metrics* out);

#ifdef __cplusplus
}
#endif

#endif
