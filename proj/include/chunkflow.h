/* SPDX-License-Identifier: Apache-2.0 */
/* C interface to the chunkflow library. All functions return a status code;
 * on failure cf_last_error() holds a message for the calling thread. */
#ifndef CHUNKFLOW_H
#define CHUNKFLOW_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CF_API __attribute__((visibility("default")))
#else
#define CF_API
#endif

typedef enum cf_status {
  CF_OK = 0,
  CF_ERR_INVALID_SHAPE = 1,
  CF_ERR_ORACLE_FAILURE = 2,
  CF_ERR_DOMAIN = 3,
  CF_ERR_CONFIG = 4,
  CF_ERR_DIRAC_KERNEL = 5,
  CF_ERR_SINGULAR_DRIFT = 6,
  CF_ERR_LAYOUT = 7,
  CF_ERR_SHAPE = 8,
  CF_ERR_LEVEL = 9,
  CF_ERR_WEIGHTING = 10,
  CF_ERR_REWARD_EVALUATION = 11,
  CF_ERR_IO = 12,
  CF_ERR_DEPENDENCY = 13,
  CF_ERR_TRAINING_FAILURE = 14,
  CF_ERR_FORMAT = 15,
  CF_ERR_ARGUMENT = 16, /* null handle or pointer */
  CF_ERR_INTERNAL = 17  /* unexpected exception, including allocation failure */
} cf_status;

typedef struct cf_experiment cf_experiment;
typedef struct cf_model cf_model;

CF_API const char* cf_version(void);
CF_API const char* cf_status_name(cf_status status);
/* Message of the last failed call on this thread; "" after a success. */
CF_API const char* cf_last_error(void);

/* Experiments. `kind` is one of gen-data, pretrain-teacher, distill, rl, eval. */
CF_API cf_status cf_experiment_new(const char* kind, cf_experiment** out);
CF_API cf_status cf_experiment_load(const char* config_path, cf_experiment** out);
CF_API void cf_experiment_free(cf_experiment* exp);

CF_API cf_status cf_experiment_set_kind(cf_experiment* exp, const char* kind);
CF_API cf_status cf_experiment_set_seed(cf_experiment* exp, uint64_t seed);
/* Output root; the run directory is <root>/<name>. */
CF_API cf_status cf_experiment_set_out(cf_experiment* exp, const char* root);
CF_API cf_status cf_experiment_set_run_dir(cf_experiment* exp, const char* dir);
CF_API cf_status cf_experiment_set_teacher(cf_experiment* exp, const char* checkpoint);
CF_API cf_status cf_experiment_set_student(cf_experiment* exp, const char* checkpoint);
CF_API cf_status cf_experiment_set_dataset(cf_experiment* exp, const char* dataset);

/* String outputs follow snprintf conventions: up to cap bytes are written,
 * NUL-terminated, and *needed (if non-null) receives the full length. */
CF_API cf_status cf_experiment_config_json(const cf_experiment* exp, char* buf, size_t cap, size_t* needed);
CF_API cf_status cf_experiment_run_dir(const cf_experiment* exp, char* buf, size_t cap, size_t* needed);

/* Runs the stage; summary.txt in the run directory holds the final metrics. */
CF_API cf_status cf_experiment_run(cf_experiment* exp);
/* Runs a sweep preset (table2, fig4, table4, table5) under the run directory. */
CF_API cf_status cf_experiment_run_preset(cf_experiment* exp, const char* preset);

/* Writes report.txt and report.csv for a run or sweep directory. */
CF_API cf_status cf_report(const char* dir, size_t* rows);

/* Checkpoints. */
CF_API cf_status cf_model_load(const char* path, cf_model** out);
CF_API void cf_model_free(cf_model* model);
CF_API cf_status cf_model_parameter_count(const cf_model* model, size_t* count);
/* "teacher", "student" or "critic". */
CF_API const char* cf_model_role(const cf_model* model);

#ifdef __cplusplus
}
#endif

#endif /* CHUNKFLOW_H */
