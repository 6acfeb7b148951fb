/* stretchlab shared-library C API.
 *
 * A thin, stable surface over the C++ core: opaque handles, integer status
 * codes, and a thread-local error message. Status codes match the CLI exit
 * codes (0 ok, 2 configuration error, 3 numeric failure).
 */
#ifndef STRETCHLAB_H
#define STRETCHLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define STRETCHLAB_API __declspec(dllexport)
#else
#define STRETCHLAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  STRETCHLAB_OK = 0,
  STRETCHLAB_ERR_CONFIG = 2,
  STRETCHLAB_ERR_NUMERIC = 3,
  STRETCHLAB_ERR_IO = 4,
  STRETCHLAB_ERR_INVALID = 5
} stretchlab_status;

typedef struct stretchlab_config stretchlab_config;

STRETCHLAB_API const char *stretchlab_version(void);

/* Message of the last failing call on this thread; empty string if none. */
STRETCHLAB_API const char *stretchlab_last_error(void);

STRETCHLAB_API void stretchlab_string_free(char *s);

/* ---- configuration ---- */

STRETCHLAB_API int stretchlab_config_open(const char *path,
                                          stretchlab_config **out);
STRETCHLAB_API int stretchlab_config_parse(const char *json_text,
                                           stretchlab_config **out);
STRETCHLAB_API void stretchlab_config_close(stretchlab_config *cfg);

/* Canonical JSON echo; caller frees with stretchlab_string_free. */
STRETCHLAB_API int stretchlab_config_to_json(const stretchlab_config *cfg,
                                             char **out_json);

/* Override train.mode / train.variant fields (NULL leaves a field as-is). */
STRETCHLAB_API int stretchlab_config_set_train(stretchlab_config *cfg,
                                               const char *mode,
                                               const char *variant);

/* ---- pipeline operations ---- */

STRETCHLAB_API int stretchlab_generate_dataset(const stretchlab_config *cfg,
                                               const char *out_dir, int episodes,
                                               uint64_t seed);

/* init_checkpoint may be NULL (required for finetune mode). log_csv may be
 * NULL to skip the per-epoch training log. */
STRETCHLAB_API int stretchlab_train(const stretchlab_config *cfg,
                                    const char *data_dir,
                                    const char *out_checkpoint,
                                    const char *init_checkpoint,
                                    const char *log_csv);

/* settings_csv: comma-separated horizon names from {short,mid,long}.
 * zero_noise: nonzero replaces every sample with the mean rollout.
 * save_predictions: nonzero also serializes pred_instance arrays per
 * episode under <out_dir>/predictions/. */
STRETCHLAB_API int stretchlab_evaluate(const char *checkpoint,
                                       const char *data_dir,
                                       const char *settings_csv, int n_samples,
                                       uint64_t seed, int zero_noise,
                                       int save_predictions,
                                       const char *out_dir);

STRETCHLAB_API int stretchlab_plot(const char *metrics_csv, const char *out_dir);

#ifdef __cplusplus
}
#endif

#endif /* STRETCHLAB_H */
