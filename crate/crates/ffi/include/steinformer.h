#ifndef STEINFORMER_H
#define STEINFORMER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
enum StfStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  STF_STATUS_OK = 0,
  STF_STATUS_IO = 1,
  STF_STATUS_CONFIG = 2,
  STF_STATUS_DATA = 3,
  STF_STATUS_NUMERIC = 4,
  STF_STATUS_NULL_ARGUMENT = 5,
  STF_STATUS_PANIC = 6,
};
#ifndef __cplusplus
typedef int32_t StfStatus;
#endif // __cplusplus

/*
 Opaque model handle.
 */
typedef struct StfModel StfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Build a model from an experiment configuration in JSON (`"{}"` for the
 defaults). Writes the new handle to `out`; free it with [`stf_model_free`].

 # Safety
 `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
StfStatus stf_model_create(const char *config_json, struct StfModel **out);

/*
 Replace the model's weights with those of a `STEIN1` file.

 # Safety
 `model` must come from [`stf_model_create`]; `path` must be NUL-terminated.
 */
StfStatus stf_model_load_weights(struct StfModel *model, const char *path);

/*
 Change mask for one image pair. `t1` and `t2` hold `3 × height × width`
 channel-major values in `[0, 1]`; `out_mask` receives `height × width`
 bytes, 1 for changed pixels.

 # Safety
 Buffers must be valid for the stated lengths.
 */
StfStatus stf_model_predict(const struct StfModel *model,
                            const float *t1,
                            const float *t2,
                            size_t height,
                            size_t width,
                            uint8_t *out_mask);

/*
 Number of learnable parameters.

 # Safety
 `model` and `out` must be valid pointers.
 */
StfStatus stf_model_count_params(const struct StfModel *model, uint64_t *out);

/*
 Forward-pass FLOPs for a `height × width` image pair.

 # Safety
 `model` and `out` must be valid pointers.
 */
StfStatus stf_model_flops(const struct StfModel *model, size_t height, size_t width, uint64_t *out);

/*
 Release a handle; null is ignored.

 # Safety
 `model` must come from [`stf_model_create`] and not be used afterwards.
 */
void stf_model_free(struct StfModel *model);

/*
 Copy the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length plus one, or 0 when
 no error has been recorded.

 # Safety
 `buf` must be valid for `len` bytes, or null with `len == 0`.
 */
size_t stf_last_error(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *stf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEINFORMER_H */
