#ifndef HIERKNN_H
#define HIERKNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HkStatus {
  HK_STATUS_OK = 0,
  HK_STATUS_NULL_ARGUMENT = 1,
  HK_STATUS_INVALID_ARGUMENT = 2,
  HK_STATUS_IO = 3,
  HK_STATUS_FORMAT = 4,
  HK_STATUS_TAXONOMY_MISMATCH = 5,
  HK_STATUS_DIM_MISMATCH = 6,
  HK_STATUS_UNKNOWN_LABEL = 7,
  HK_STATUS_DATA = 8,
  HK_STATUS_PANIC = 99,
} HkStatus;

typedef struct HkBank HkBank;

typedef struct HkTaxonomy HkTaxonomy;

// Leaf, level-2 and lineage indices of one prediction. For flat votes the
// coarse levels are the ancestors of the leaf and no fallback is reported.
typedef struct HkPrediction {
  size_t y1;
  size_t y2;
  size_t y3;
  bool fallback[3];
} HkPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *hk_last_error_message(void);

// The built-in 13-leaf taxonomy.
//
// # Safety
// `out` must be a valid pointer to write a handle into.
enum HkStatus hk_taxonomy_default(struct HkTaxonomy **out);

// Parse a taxonomy from NUL-terminated text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` a valid pointer.
enum HkStatus hk_taxonomy_parse(const char *text, struct HkTaxonomy **out);

// Read and parse a taxonomy file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum HkStatus hk_taxonomy_load(const char *path, struct HkTaxonomy **out);

// # Safety
// `tax` must come from a taxonomy constructor and not be freed twice. Null is ignored.
void hk_taxonomy_free(struct HkTaxonomy *tax);

// Number of leaves, or 0 for a null handle.
//
// # Safety
// `tax` must be null or a live handle.
size_t hk_taxonomy_leaf_count(const struct HkTaxonomy *tax);

// Name of `leaf`, or null when out of range. Owned by the handle.
//
// # Safety
// `tax` must be null or a live handle.
const char *hk_taxonomy_leaf_name(const struct HkTaxonomy *tax, size_t leaf);

// Leaf index of `name`.
//
// # Safety
// `tax` must be a live handle, `name` NUL-terminated, `out` valid.
enum HkStatus hk_taxonomy_leaf_index(const struct HkTaxonomy *tax, const char *name, size_t *out);

// Ancestor of `leaf` at `level` (1, 2 or 3).
//
// # Safety
// `tax` must be a live handle and `out` valid.
enum HkStatus hk_taxonomy_ancestor(const struct HkTaxonomy *tax,
                                   size_t leaf,
                                   size_t level,
                                   size_t *out);

// Load a bank file built against `tax`.
//
// # Safety
// `path` must be NUL-terminated, `tax` live, `out` valid.
enum HkStatus hk_bank_load(const char *path, const struct HkTaxonomy *tax, struct HkBank **out);

// Build a bank from `count` row-major vectors of length `dim` and one leaf
// index per vector. Vectors are L2-normalized; entry ids are "0", "1", ...
//
// # Safety
// `vectors` must hold `count * dim` floats, `leaves` `count` indices.
enum HkStatus hk_bank_build(const struct HkTaxonomy *tax,
                            const float *vectors,
                            size_t count,
                            size_t dim,
                            const size_t *leaves,
                            struct HkBank **out);

// # Safety
// `bank` must be a live handle and `path` NUL-terminated.
enum HkStatus hk_bank_save(const struct HkBank *bank, const char *path);

// # Safety
// `bank` must come from a bank constructor and not be freed twice. Null is ignored.
void hk_bank_free(struct HkBank *bank);

// # Safety
// `bank` must be null or a live handle.
size_t hk_bank_dim(const struct HkBank *bank);

// # Safety
// `bank` must be null or a live handle.
size_t hk_bank_len(const struct HkBank *bank);

// Classify one query vector of length `dim`.
//
// # Safety
// Handles must be live, `query` must hold `dim` floats, `out` valid.
enum HkStatus hk_classify(const struct HkBank *bank,
                          const struct HkTaxonomy *tax,
                          const float *query,
                          size_t dim,
                          size_t k,
                          bool flat,
                          struct HkPrediction *out);

// Majority vote of `members` banks on one query. `tie_policy` is 0 for
// similarity margin, 1 for first member. Writes the winning leaf and the
// number of members that voted for it.
//
// # Safety
// `banks` must hold `members` live handles and `query` `dim` floats.
enum HkStatus hk_ensemble_classify(const struct HkBank *const *banks,
                                   size_t members,
                                   const struct HkTaxonomy *tax,
                                   const float *query,
                                   size_t dim,
                                   size_t k,
                                   bool flat,
                                   uint32_t tie_policy,
                                   size_t *leaf_out,
                                   size_t *votes_out);

// Macro F1 over `classes` classes; absent classes count as F1 = 0.
//
// # Safety
// `truth` and `preds` must each hold `n` values; `out` valid.
enum HkStatus hk_macro_f1(const size_t *truth,
                          const size_t *preds,
                          size_t n,
                          size_t classes,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERKNN_H */
