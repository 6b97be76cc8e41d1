#ifndef NEIGHBOR_XAI_H
#define NEIGHBOR_XAI_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum {
  NX_STATUS_OK = 0,
  // a required pointer argument was null
  NX_STATUS_NULL_ARGUMENT = 1,
  // bad name, index, UTF-8 or configuration
  NX_STATUS_INVALID_ARGUMENT = 2,
  // unreadable or malformed file
  NX_STATUS_IO = 3,
  // model and data or explanations do not fit together
  NX_STATUS_MISMATCH = 4,
  // divergence or non-finite loss
  NX_STATUS_NUMERICAL = 5,
  // output buffer too small; the required length was written
  NX_STATUS_BUFFER_TOO_SMALL = 6,
  NX_STATUS_PANIC = 7,
} nx_status;

// Architecture selector for [`nx_model_train`].
typedef enum {
  NX_ARCH_GCN = 0,
  NX_ARCH_GATV2 = 1,
} nx_arch;

// Explanations of the test-split nodes produced by one method.
typedef struct nx_explanations nx_explanations;

// Loaded dataset.
typedef struct nx_graph nx_graph;

// Trained classifier.
typedef struct nx_model nx_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *nx_last_error(void);

// Library version as a static NUL-terminated string.
const char *nx_version(void);

// Loads a dataset directory in the interchange format.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
nx_status nx_graph_load(const char *path, nx_graph **out);

// # Safety
// `graph` must come from this library and not be used afterwards. Null is
// ignored.
void nx_graph_free(nx_graph *graph);

// Number of nodes, or 0 for a null handle.
//
// # Safety
// `graph` must be null or a live handle.
size_t nx_graph_num_nodes(const nx_graph *graph);

// Trains a classifier with the library defaults for `arch`. The graph's
// self-loops are set to `self_loops` before training.
//
// # Safety
// `graph` must be a live handle and `out` a valid pointer.
nx_status nx_model_train(const nx_graph *graph,
                         nx_arch arch,
                         bool self_loops,
                         size_t epochs,
                         uint64_t seed,
                         nx_model **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
nx_status nx_model_load(const char *path, nx_model **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
nx_status nx_model_save(const nx_model *model, const char *path);

// # Safety
// `model` must come from this library and not be used afterwards. Null is
// ignored.
void nx_model_free(nx_model *model);

// Explains every test-split node with `method` (`saliency`, `smoothgrad`,
// `deconvnet`, `guided`, `gnnexplainer` or `pgexplainer`). For
// `pgexplainer` the edge-mask network is first trained on the training
// split. `jobs` is the worker count, 0 for one per core.
//
// # Safety
// `model` and `graph` must be live handles, `method` a NUL-terminated
// string and `out` a valid pointer.
nx_status nx_explain(const nx_model *model,
                     const nx_graph *graph,
                     const char *method,
                     uint64_t seed,
                     size_t jobs,
                     nx_explanations **out);

// Number of explained nodes, or 0 for a null handle.
//
// # Safety
// `explanations` must be null or a live handle.
size_t nx_explanations_len(const nx_explanations *explanations);

// Copies record `index`: its target node into `target` and its neighbors
// with their importance scores, ascending by id, into `ids`/`scores`.
// `len` receives the neighbor count. If `capacity` is smaller than that,
// nothing is copied and `NX_STATUS_BUFFER_TOO_SMALL` is returned, so a
// first call with capacity 0 queries the size.
//
// # Safety
// `explanations` must be a live handle, `target` and `len` valid
// pointers, and `ids`/`scores` valid for `capacity` elements (may be null
// when `capacity` is 0).
nx_status nx_explanations_get(const nx_explanations *explanations,
                              size_t index,
                              size_t *target,
                              size_t *ids,
                              double *scores,
                              size_t capacity,
                              size_t *len);

// Writes the explanations as JSON lines.
//
// # Safety
// `explanations` must be a live handle and `path` a NUL-terminated string.
nx_status nx_explanations_save(const nx_explanations *explanations, const char *path);

// # Safety
// `explanations` must come from this library and not be used afterwards.
// Null is ignored.
void nx_explanations_free(nx_explanations *explanations);

// AUC of `metric` (`loyalty`, `inverse_loyalty`, `loyalty_probabilities`
// or `inverse_loyalty_probabilities`) on the default 0..100 grid.
//
// # Safety
// Handles must be live, `metric` a NUL-terminated string and `auc` a valid
// pointer.
nx_status nx_metric_auc(const nx_model *model,
                        const nx_graph *graph,
                        const nx_explanations *explanations,
                        const char *metric,
                        size_t jobs,
                        double *auc);

// Loyalty after deleting, per explained node, every neighbor with nonzero
// importance (`all_neighbors` false) or the whole receptive field
// (`all_neighbors` true).
//
// # Safety
// Handles must be live and `value` a valid pointer.
nx_status nx_all_deleted(const nx_model *model,
                         const nx_graph *graph,
                         const nx_explanations *explanations,
                         bool all_neighbors,
                         double *value);

// Trains a GCN on the built-in zero-gradient gadget and reports, for the
// leaf neighbor, the largest feature gradient and the change of the
// predicted logit when the leaf is deleted.
//
// # Safety
// `gradient` and `delta_logit` must be valid pointers.
nx_status nx_gadget(bool self_loops, uint64_t seed, double *gradient, double *delta_logit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEIGHBOR_XAI_H */
