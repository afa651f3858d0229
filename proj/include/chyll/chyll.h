#ifndef CHYLL_H
#define CHYLL_H

/* C interface to the chyll library. All functions are safe to call from
 * several threads on distinct handles. On failure a function returns a
 * non-zero status and chyll_last_error() describes it (per thread). */

#include <stddef.h>

#if defined(_WIN32)
#define CHYLL_API __declspec(dllexport)
#else
#define CHYLL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum chyll_status {
  CHYLL_OK = 0,
  CHYLL_ERR_CONFIG = 2,
  CHYLL_ERR_SIMULATION = 3,
  CHYLL_ERR_TRAINING = 4,
  CHYLL_ERR_EVALUATION = 5,
  CHYLL_ERR_IO = 6,
  CHYLL_ERR_INVALID_ARGUMENT = 7,
  CHYLL_ERR_INTERNAL = 8
} chyll_status;

typedef enum chyll_decode_mode { CHYLL_DECODE_DECODER = 0, CHYLL_DECODE_LM = 1 } chyll_decode_mode;

typedef struct chyll_dataset chyll_dataset;
typedef struct chyll_model chyll_model;

typedef void (*chyll_log_fn)(const char* line, void* user);

CHYLL_API const char* chyll_version(void);
/* Message of the last failed call on this thread ("" if none). */
CHYLL_API const char* chyll_last_error(void);
CHYLL_API void chyll_string_free(char* s);

/* Runs one command ("generate", "train", "eval", "tda", "control") with its
 * JSON config. On success *result_json (if non-null) receives a summary that
 * the caller frees with chyll_string_free. */
CHYLL_API chyll_status chyll_run_command(const char* command, const char* config_json, chyll_log_fn log, void* user,
                                         char** result_json);

CHYLL_API chyll_status chyll_dataset_load(const char* path, chyll_dataset** out);
CHYLL_API void chyll_dataset_free(chyll_dataset* ds);
CHYLL_API chyll_status chyll_dataset_info(const chyll_dataset* ds, int* trajectories, int* state_dim, int* action_dim,
                                          double* dt);
/* Copies the states of trajectory `index` (file order) row-major into buf.
 * *rows receives the sample count; buf may be null to query it. */
CHYLL_API chyll_status chyll_dataset_states(const chyll_dataset* ds, int index, double* buf, size_t capacity,
                                            size_t* rows);

CHYLL_API chyll_status chyll_model_load(const char* bundle_dir, chyll_model** out);
CHYLL_API void chyll_model_free(chyll_model* m);
CHYLL_API chyll_status chyll_model_dims(const chyll_model* m, int* state_dim, int* latent_dim, int* action_dim);
/* x: rows x state_dim, z: rows x latent_dim, both row-major. */
CHYLL_API chyll_status chyll_model_encode(const chyll_model* m, const double* x, size_t rows, double* z);
CHYLL_API chyll_status chyll_model_decode(const chyll_model* m, const double* z, size_t rows, double* x);
/* Levenberg-Marquardt projection of latent points back to states; residual
 * (may be null) receives ||E(x) - z|| per row. */
CHYLL_API chyll_status chyll_model_project(const chyll_model* m, const double* z, size_t rows, double* x,
                                           double* residual);
/* Rolls x0 forward `steps` samples of length dt; out receives (steps + 1) x
 * state_dim. actions (steps x action_dim) is required for controlled models. */
CHYLL_API chyll_status chyll_model_predict(const chyll_model* m, const double* x0, int steps, double dt,
                                           const double* actions, chyll_decode_mode mode, double* out);

#ifdef __cplusplus
}
#endif

#endif
