#ifndef MIREG_H
#define MIREG_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status code returned by every fallible function.
 */
typedef enum MiregStatus {
  MIREG_STATUS_OK = 0,
  MIREG_STATUS_NULL_POINTER = 1,
  MIREG_STATUS_INVALID_ARGUMENT = 2,
  MIREG_STATUS_IO = 3,
  MIREG_STATUS_PARSE = 4,
  MIREG_STATUS_MISSING_MODEL = 5,
  MIREG_STATUS_MISSING_LABELS = 6,
  MIREG_STATUS_COMPUTATION = 7,
  MIREG_STATUS_PANIC = 8,
} MiregStatus;

/*
 Source of the correspondence embeddings.
 */
typedef enum MiregMode {
  /*
   Trained network; requires a model handle.
   */
  MIREG_MODE_DEEP = 0,
  /*
   Spatial consistency only.
   */
  MIREG_MODE_BETA = 1,
  /*
   Ground-truth labels; requires a labeled scene.
   */
  MIREG_MODE_ORACLE = 2,
} MiregMode;

/*
 Trained embedding network.
 */
typedef struct MiregModel MiregModel;

/*
 Output of one registration.
 */
typedef struct MiregResult MiregResult;

/*
 A set of putative correspondences, optionally with ground truth.
 */
typedef struct MiregScene MiregScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *mireg_version(void);

/*
 Message of the last failed call on this thread, or NULL if none.
 Valid until the next failing call on the same thread.
 */
const char *mireg_last_error_message(void);

/*
 Loads a scene JSON file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MiregStatus mireg_scene_load(const char *path, struct MiregScene **out);

/*
 Builds an unlabeled scene from `n` source and `n` target points, each
 given as `3 * n` packed doubles.

 # Safety
 `source` and `target` must point to `3 * n` readable doubles.
 */
enum MiregStatus mireg_scene_from_points(const double *source,
                                         const double *target,
                                         size_t n,
                                         struct MiregScene **out);

/*
 Generates a labeled synthetic scene with default generator settings.

 # Safety
 `out` must be a valid pointer.
 */
enum MiregStatus mireg_scene_generate(uint64_t seed, struct MiregScene **out);

/*
 Number of correspondences, or 0 for NULL.

 # Safety
 `scene` must be NULL or a live handle.
 */
size_t mireg_scene_len(const struct MiregScene *scene);

/*
 Number of ground-truth instances, or 0 for NULL or unlabeled scenes.

 # Safety
 `scene` must be NULL or a live handle.
 */
size_t mireg_scene_num_instances(const struct MiregScene *scene);

/*
 # Safety
 `scene` must be NULL or a handle not yet freed.
 */
void mireg_scene_free(struct MiregScene *scene);

/*
 Loads a model checkpoint.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MiregStatus mireg_model_load(const char *path, struct MiregModel **out);

/*
 # Safety
 `model` must be NULL or a handle not yet freed.
 */
void mireg_model_free(struct MiregModel *model);

/*
 Runs the registration pipeline.

 `config_json` may be NULL for defaults; otherwise it is a run
 configuration document. `model` may be NULL unless `mode` is Deep.

 # Safety
 Handles must be live, `config_json` NULL or NUL-terminated, `out` valid.
 */
enum MiregStatus mireg_register(const struct MiregScene *scene,
                                const struct MiregModel *model,
                                enum MiregMode mode,
                                const char *config_json,
                                uint64_t seed,
                                struct MiregResult **out);

/*
 Number of recovered transforms, or 0 for NULL.

 # Safety
 `result` must be NULL or a live handle.
 */
size_t mireg_result_num_transforms(const struct MiregResult *result);

/*
 Copies transform `index` as a row-major 3x3 rotation and a translation.

 # Safety
 `rotation` must hold 9 doubles and `translation` 3.
 */
enum MiregStatus mireg_result_transform(const struct MiregResult *result,
                                        size_t index,
                                        double *rotation,
                                        double *translation);

/*
 Length of the per-correspondence assignment, or 0 for NULL.

 # Safety
 `result` must be NULL or a live handle.
 */
size_t mireg_result_assignment_len(const struct MiregResult *result);

/*
 Copies the assignment (1-based transform index, 0 = unassigned) into
 `out`, which must have exactly `len` slots.

 # Safety
 `out` must point to `len` writable `uint32_t`.
 */
enum MiregStatus mireg_result_assignment(const struct MiregResult *result,
                                         uint32_t *out,
                                         size_t len);

/*
 # Safety
 `result` must be NULL or a handle not yet freed.
 */
void mireg_result_free(struct MiregResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIREG_H */
