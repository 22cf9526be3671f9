/* C interface to the meseg shared library.
 *
 * Every function returns a meseg_status (0 on success); on failure
 * meseg_last_error() describes what went wrong for the calling thread.
 * Objects returned through out-parameters are owned by the caller and
 * released with the matching _free function. All paths are UTF-8/native.
 */
#ifndef MESEG_MESEG_H
#define MESEG_MESEG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum meseg_status {
  MESEG_OK = 0,
  MESEG_ERR_INVALID_ARGUMENT = 1,
  MESEG_ERR_DIM_MISMATCH = 2,
  MESEG_ERR_IO = 3,
  MESEG_ERR_FORMAT = 4,
  MESEG_ERR_NUMERIC = 5,
  MESEG_ERR_DIVERGED = 6,
  MESEG_ERR_UNKNOWN = 7
} meseg_status;

/* ECE conventions (see the library docs): bin the foreground probability
 * against the fraction of positives, or bin max(p, 1-p) against accuracy. */
#define MESEG_ECE_POSITIVE_PROB 0
#define MESEG_ECE_MAX_PROB 1

typedef struct meseg_volume meseg_volume;
typedef struct meseg_mask meseg_mask;
typedef struct meseg_model meseg_model;
typedef struct meseg_config meseg_config;

const char* meseg_version(void);

/* Message for the most recent failure on this thread; empty after success. */
const char* meseg_last_error(void);

/* Volumes ------------------------------------------------------------- */

int meseg_volume_create(int nx, int ny, int nz, double sx, double sy,
                        double sz, const double* data, meseg_volume** out);
int meseg_volume_read_nifti(const char* path, meseg_volume** out);
/* float64: nonzero stores doubles losslessly, zero stores float32.
 * gzip: nonzero writes a gzip container (use a .nii.gz name). */
int meseg_volume_write_nifti(const meseg_volume* v, const char* path,
                             int float64, int gzip);
int meseg_volume_dims(const meseg_volume* v, int* nx, int* ny, int* nz);
int meseg_volume_spacing(const meseg_volume* v, double* sx, double* sy,
                         double* sz);
/* Borrowing view of the x-fastest voxel array; valid until the volume is
 * freed. */
int meseg_volume_data(const meseg_volume* v, const double** data, size_t* n);
void meseg_volume_free(meseg_volume* v);

/* Masks ---------------------------------------------------------------- */

/* True where the volume is nonzero. */
int meseg_mask_from_volume(const meseg_volume* v, meseg_mask** out);
/* True where probability > t (strict). Values must lie in [0, 1]. */
int meseg_mask_threshold(const meseg_volume* probs, double t,
                         meseg_mask** out);
int meseg_mask_count(const meseg_mask* m, size_t* n_true);
void meseg_mask_free(meseg_mask* m);

/* Losses and metrics ---------------------------------------------------- */

/* Binary entropy in bits; 1 at p = 0.5, 0 at p in {0, 1}. */
int meseg_binary_entropy(double p, double* out);
/* Per-voxel binary entropy of a probability volume. */
int meseg_entropy_map(const meseg_volume* probs, meseg_volume** out);
/* Combined training loss for a strategy name (ce, ce+meall, ce+meep,
 * ce+kl); lambda is ignored for plain ce. */
int meseg_combined_loss(const meseg_volume* probs, const meseg_mask* gt,
                        const char* strategy, double lambda, double* value);
int meseg_dice(const meseg_mask* g, const meseg_mask* p, double* out);
/* Symmetric boundary Hausdorff distance in mm; percentile 100 is exact,
 * lower values give the robust variant. Empty masks are an error. */
int meseg_hausdorff(const meseg_mask* g, const meseg_mask* p,
                    double percentile, double* out);
/* Expected calibration error over 10 equal bins ([0.9, 1.0] closed).
 * labels are 0/1; convention is one of the MESEG_ECE_* constants. */
int meseg_ece(const double* probs, const int* labels, size_t n,
              int convention, double* out);
/* Mean binary entropy over voxels with probability > t. *defined is set to
 * 0 (and *out to 0) when no voxel qualifies. */
int meseg_mean_foreground_entropy(const meseg_volume* probs, double t,
                                  double* out, int* defined);
int meseg_pearson_r(const double* xs, const double* ys, size_t n,
                    double* out);
/* Two-sided Mann-Whitney U test (midranks; exact permutation p for small
 * pooled sizes, tie-corrected normal approximation otherwise). */
int meseg_mann_whitney_u(const double* a, size_t na, const double* b,
                         size_t nb, double* u, double* p_two_sided);

/* Models ---------------------------------------------------------------- */

int meseg_model_load(const char* checkpoint_path, meseg_model** out);
/* Probability map of the model on an image of any grid size. */
int meseg_model_predict(const meseg_model* m, const meseg_volume* image,
                        meseg_volume** probs_out);
void meseg_model_free(meseg_model* m);

/* Experiment pipeline ---------------------------------------------------- */

int meseg_config_load(const char* path, meseg_config** out);
/* Built-in defaults (the shipped four-strategy synthetic experiment). */
int meseg_config_default(meseg_config** out);
int meseg_config_set_seed(meseg_config* cfg, uint64_t seed);
int meseg_config_seed(const meseg_config* cfg, uint64_t* out);
/* which: "data", "model" or "report". Copies the configured directory into
 * buf (failing with MESEG_ERR_INVALID_ARGUMENT if bufsz is too small). */
int meseg_config_dir(const meseg_config* cfg, const char* which, char* buf,
                     size_t bufsz);
/* 16 lowercase hex digits plus NUL; bufsz must be >= 17. */
int meseg_config_hash_hex(const meseg_config* cfg, char* buf, size_t bufsz);
void meseg_config_free(meseg_config* cfg);

/* Generates the dataset splits plus manifest.json under out_dir. */
int meseg_cmd_synth(const meseg_config* cfg, const char* out_dir);
/* Trains one strategy; lambda_or_null may point to a fixed lambda (skipping
 * the grid search). The selected lambda is written to selected_lambda when
 * non-NULL. Writes <strategy>.ckpt, <strategy>_history.csv and
 * <strategy>_train.json under out_dir. */
int meseg_cmd_train(const meseg_config* cfg, const char* data_dir,
                    const char* strategy, const double* lambda_or_null,
                    const char* out_dir, double* selected_lambda);
/* Probability maps for every test scan under out_dir. */
int meseg_cmd_predict(const char* checkpoint_path, const char* data_dir,
                      const char* out_dir);
/* Per-scan CSV, aggregate JSON, reliability CSV and SVG under out_dir. */
int meseg_cmd_eval(const char* checkpoint_path, const char* data_dir,
                   const char* out_dir);
/* Cross-strategy comparison tables from n aggregate JSON files. */
int meseg_cmd_report(const char* const* aggregate_paths, size_t n,
                     const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MESEG_MESEG_H */
