#ifndef AGFT_AGFT_H_
#define AGFT_AGFT_H_

/* C interface to the agft library. Every call returns an agft_status; on
 * failure agft_last_error() describes the problem (thread-local, valid until
 * the next call on the same thread). Handles are opaque and owned by the
 * caller once returned. */

#include <stddef.h>

#if defined(AGFT_BUILDING_LIBRARY)
#define AGFT_API __attribute__((visibility("default")))
#else
#define AGFT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum agft_status {
  AGFT_OK = 0,
  AGFT_ERR_CONFIG = 1,   /* bad config file, key or value */
  AGFT_ERR_RUNTIME = 2,  /* stage failure, numerical error */
  AGFT_ERR_IO = 3,       /* unreadable, truncated or malformed file */
  AGFT_ERR_ARGUMENT = 4  /* null handle, bad buffer, contract violation */
} agft_status;

typedef struct agft_config agft_config;
typedef struct agft_model agft_model;
typedef struct agft_dataset agft_dataset;

enum { AGFT_EMIT_JSONL = 1, AGFT_EMIT_CSV = 2, AGFT_EMIT_BOTH = 3 };

AGFT_API const char* agft_last_error(void);
AGFT_API const char* agft_version(void);
/* 0 trace ... 6 off, as in spdlog. Logs go to stderr. */
AGFT_API void agft_set_log_level(int level);

AGFT_API agft_status agft_config_default(agft_config** out);
AGFT_API agft_status agft_config_load(const char* path, agft_config** out);
AGFT_API agft_status agft_config_parse(const char* text, agft_config** out);
AGFT_API agft_status agft_config_set(agft_config* config, const char* key, const char* value);
/* Copies the canonical text into buf (NUL-terminated). *needed receives the
 * size including the terminator; buf may be NULL to query it. */
AGFT_API agft_status agft_config_serialize(const agft_config* config, char* buf, size_t size,
                                           size_t* needed);
/* 16 hex digits plus NUL; buf needs at least 17 bytes. */
AGFT_API agft_status agft_config_hash(const agft_config* config, char* buf, size_t size);
AGFT_API void agft_config_free(agft_config* config);

/* Pipeline stages. Each refreshes manifest.json in the output directory.
 * method / model may be NULL to cover every configured or present one. */
AGFT_API agft_status agft_gen_data(const agft_config* config);
AGFT_API agft_status agft_pretrain(const agft_config* config);
AGFT_API agft_status agft_finetune(const agft_config* config, const char* method);
AGFT_API agft_status agft_attack(const agft_config* config, const char* model);
AGFT_API agft_status agft_evaluate(const agft_config* config, const char* model, int emit);
AGFT_API agft_status agft_ablate(const agft_config* config, int emit);
AGFT_API agft_status agft_pipeline(const agft_config* config, int emit);

AGFT_API agft_status agft_model_load(const char* path, agft_model** out);
AGFT_API agft_status agft_model_save(const agft_model* model, const char* path);
AGFT_API agft_status agft_model_info(const agft_model* model, size_t* input_dim,
                                     size_t* num_classes, double* tau);
/* x is n rows of input_dim values; writes n predicted classes. */
AGFT_API agft_status agft_model_predict(const agft_model* model, const double* x, size_t n,
                                        size_t* classes);
AGFT_API void agft_model_free(agft_model* model);

AGFT_API agft_status agft_dataset_read(const char* path, agft_dataset** out);
AGFT_API agft_status agft_dataset_write(const agft_dataset* dataset, const char* path);
AGFT_API agft_status agft_dataset_info(const agft_dataset* dataset, size_t* size,
                                       size_t* input_dim, size_t* num_classes);
AGFT_API agft_status agft_accuracy(const agft_model* model, const agft_dataset* dataset,
                                   double* out);
AGFT_API void agft_dataset_free(agft_dataset* dataset);

#ifdef __cplusplus
}
#endif

#endif /* AGFT_AGFT_H_ */
