#ifndef POOLSKIP_H
#define POOLSKIP_H

/* This file is generated by cbindgen from poolskip-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every C-ABI call.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_SHAPE_MISMATCH = 3,
  PS_STATUS_ZERO_EXTENT = 4,
  PS_STATUS_KERNEL_TOO_LARGE = 5,
  PS_STATUS_NON_ODD_KERNEL = 6,
  PS_STATUS_INDIVISIBLE_POOL_SIZE = 7,
  PS_STATUS_INCONSISTENT_INDICES = 8,
  PS_STATUS_DEGENERATE_BATCH = 9,
  PS_STATUS_LABEL_OUT_OF_RANGE = 10,
  // The requested quantity is undefined for this input (e.g. the Hoyer
  // ratio of an all-zero tensor).
  PS_STATUS_UNDEFINED = 11,
  PS_STATUS_INTERNAL = 12,
} PsStatus;

// Pool Skip variant selector, mirroring the ablation axes.
typedef enum PsVariant {
  PS_VARIANT_FULL = 0,
  PS_VARIANT_POOL_SKIP_ONLY = 1,
  PS_VARIANT_CONV_SKIP_ONLY = 2,
  PS_VARIANT_POOL_CONV_ONLY = 3,
} PsVariant;

// Dead-unit granularity selector.
typedef enum PsGranularity {
  PS_GRANULARITY_ELEMENT = 0,
  PS_GRANULARITY_CHANNEL = 1,
} PsGranularity;

// Opaque max-pooling argmax record, paired between forward and backward.
typedef struct PsPoolIndices PsPoolIndices;

// Opaque dense tensor handle.
typedef struct PsTensor PsTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Most recent error message of the calling thread. The pointer stays
// valid until the next failing call on the same thread.
const char *ps_last_error_message(void);

// Creates a tensor from a shape and row-major values.
//
// # Safety
// `shape` must point to `rank` readable `size_t`s, `data` to `len`
// readable doubles, and `out` must be a valid location for one pointer.
enum PsStatus ps_tensor_create(const size_t *shape,
                               size_t rank,
                               const double *data,
                               size_t len,
                               struct PsTensor **out);

// Releases a tensor handle. Null is ignored.
//
// # Safety
// `t` must come from this library and not have been freed already.
void ps_tensor_free(struct PsTensor *t);

// Number of axes of the tensor.
//
// # Safety
// `t` and `out` must be valid pointers.
enum PsStatus ps_tensor_rank(const struct PsTensor *t, size_t *out);

// Copies the tensor extents into `out`, which must hold `rank` entries.
//
// # Safety
// `t` must be valid and `out` writable for `ps_tensor_rank` entries.
enum PsStatus ps_tensor_shape(const struct PsTensor *t, size_t *out);

// Total number of elements.
//
// # Safety
// `t` and `out` must be valid pointers.
enum PsStatus ps_tensor_len(const struct PsTensor *t, size_t *out);

// Copies the row-major values into `out`, which must hold `len` doubles.
//
// # Safety
// `t` must be valid and `out` writable for `ps_tensor_len` doubles.
enum PsStatus ps_tensor_copy_data(const struct PsTensor *t, double *out, size_t len);

// Releases a pooling-indices handle. Null is ignored.
//
// # Safety
// `idx` must come from this library and not have been freed already.
void ps_pool_indices_free(struct PsPoolIndices *idx);

// Valid (no padding) unflipped convolution with square odd kernels.
// `weights` must be a rank-4 tensor `[c_out, c_in, M, M]`.
//
// # Safety
// All handles must be valid; `out` must be writable.
enum PsStatus ps_conv2d_forward(const struct PsTensor *x,
                                const struct PsTensor *weights,
                                size_t stride,
                                struct PsTensor **out);

// Applies a Pool Skip variant to a pre-activation map. `inner` is the
// rank-4 `[C, C, 3, 3]` kernel of the inner convolution. On success both
// the output map and the pooling indices (for `ps_pool_skip_backward`)
// are returned.
//
// # Safety
// All handles must be valid; `out` and `out_indices` must be writable.
enum PsStatus ps_pool_skip_forward(const struct PsTensor *y,
                                   const struct PsTensor *inner,
                                   size_t e,
                                   enum PsVariant variant,
                                   struct PsTensor **out,
                                   struct PsPoolIndices **out_indices);

// Chain rule through the Pool Skip graph; `indices` must come from the
// forward call on the same `y`. Writes the gradient with respect to the
// input and to the inner kernel.
//
// # Safety
// All handles must be valid; both out-pointers must be writable.
enum PsStatus ps_pool_skip_backward(const struct PsTensor *y,
                                    const struct PsTensor *inner,
                                    size_t e,
                                    enum PsVariant variant,
                                    const struct PsPoolIndices *indices,
                                    const struct PsTensor *grad_out,
                                    struct PsTensor **out_grad_y,
                                    struct PsTensor **out_grad_inner);

// Exact closed-form evaluation of the single-channel composite output from
// the input `x`, the first convolution `w` (`[1, 1, M, M]`, M odd) and the
// inner kernel `w_tilde` (`[1, 1, 3, 3]`).
//
// # Safety
// All handles must be valid; `out` must be writable.
enum PsStatus ps_pool_skip_closed_form(const struct PsTensor *x,
                                       const struct PsTensor *w,
                                       const struct PsTensor *w_tilde,
                                       size_t e,
                                       struct PsTensor **out);

// Splits the closed-form output into base convolution, affine
// compensation and dimensional compensation; `out_covered` receives a
// 0/1 map of positions where the compensated branch condition held.
//
// # Safety
// All handles must be valid; the four out-pointers must be writable.
enum PsStatus ps_compensation_decompose(const struct PsTensor *x,
                                        const struct PsTensor *w,
                                        const struct PsTensor *w_tilde,
                                        size_t e,
                                        struct PsTensor **out_base,
                                        struct PsTensor **out_affine,
                                        struct PsTensor **out_dimensional,
                                        struct PsTensor **out_covered);

// Divisibility check of a pool extent against an `H x W` input convolved
// with an odd `M x M` kernel. Writes a bitmask of violated conditions:
// bit 0 = H, bit 1 = H-M+1, bit 2 = W, bit 3 = W-M+1. A zero mask means
// the pool size is valid.
//
// # Safety
// `out_mask` must be a valid pointer.
enum PsStatus ps_validate_pool_size(size_t h, size_t w, size_t m, size_t e, uint32_t *out_mask);

// Hoyer l2/l1 ratio of a tensor's values. Returns `PS_STATUS_UNDEFINED`
// for an all-zero tensor, leaving `out` untouched.
//
// # Safety
// `t` and `out` must be valid pointers.
enum PsStatus ps_hoyer_ratio(const struct PsTensor *t, double *out);

// Fraction of dead units in a `[batch, C, H, W]` pre-activation tensor.
//
// # Safety
// `preacts` and `out` must be valid pointers.
enum PsStatus ps_dead_unit_fraction(const struct PsTensor *preacts,
                                    enum PsGranularity granularity,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POOLSKIP_H */
