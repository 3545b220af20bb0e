//! C ABI for the Pool Skip library.
//!
//! Conventions: every function returns a [`PsStatus`]; outputs are written
//! through out-pointers; tensors and pooling indices are opaque handles
//! that must be released with their `_free` function. The most recent
//! error description per thread is available via
//! [`ps_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use poolskip::error::Error;
use poolskip::ops::{conv2d_forward, ConvKernel, PoolIndices};
use poolskip::pool_skip::{
    self, closed_form, compensation_decompose, validate_pool_size, PoolSkipConfig,
    PoolSkipVariant,
};
use poolskip::diagnostics::{dead_unit_fraction, hoyer_ratio, Granularity};
use poolskip::Tensor;

/// Status code of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    ZeroExtent = 4,
    KernelTooLarge = 5,
    NonOddKernel = 6,
    IndivisiblePoolSize = 7,
    InconsistentIndices = 8,
    DegenerateBatch = 9,
    LabelOutOfRange = 10,
    /// The requested quantity is undefined for this input (e.g. the Hoyer
    /// ratio of an all-zero tensor).
    Undefined = 11,
    Internal = 12,
}

/// Pool Skip variant selector, mirroring the ablation axes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsVariant {
    Full = 0,
    PoolSkipOnly = 1,
    ConvSkipOnly = 2,
    PoolConvOnly = 3,
}

impl From<PsVariant> for PoolSkipVariant {
    fn from(v: PsVariant) -> Self {
        match v {
            PsVariant::Full => PoolSkipVariant::Full,
            PsVariant::PoolSkipOnly => PoolSkipVariant::PoolSkipOnly,
            PsVariant::ConvSkipOnly => PoolSkipVariant::ConvSkipOnly,
            PsVariant::PoolConvOnly => PoolSkipVariant::PoolConvOnly,
        }
    }
}

/// Dead-unit granularity selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsGranularity {
    Element = 0,
    Channel = 1,
}

/// Opaque dense tensor handle.
pub struct PsTensor {
    inner: Tensor,
}

/// Opaque max-pooling argmax record, paired between forward and backward.
pub struct PsPoolIndices {
    inner: PoolIndices,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PsStatus {
    match err {
        Error::ShapeMismatch(_) => PsStatus::ShapeMismatch,
        Error::ZeroExtent(_) => PsStatus::ZeroExtent,
        Error::KernelTooLarge { .. } => PsStatus::KernelTooLarge,
        Error::NonOddKernel(_) => PsStatus::NonOddKernel,
        Error::IndivisiblePoolSize { .. } => PsStatus::IndivisiblePoolSize,
        Error::InconsistentIndices(_) => PsStatus::InconsistentIndices,
        Error::DegenerateBatch(_) => PsStatus::DegenerateBatch,
        Error::LabelOutOfRange { .. } => PsStatus::LabelOutOfRange,
        _ => PsStatus::Internal,
    }
}

fn fail(err: Error) -> PsStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guarded(body: impl FnOnce() -> PsStatus) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            PsStatus::Internal
        }
    }
}

/// Most recent error message of the calling thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn tensor_ref<'a>(t: *const PsTensor) -> Option<&'a Tensor> {
    t.as_ref().map(|t| &t.inner)
}

fn emit(out: *mut *mut PsTensor, tensor: Tensor) -> PsStatus {
    unsafe { *out = Box::into_raw(Box::new(PsTensor { inner: tensor })) };
    PsStatus::Ok
}

/// Creates a tensor from a shape and row-major values.
///
/// # Safety
/// `shape` must point to `rank` readable `size_t`s, `data` to `len`
/// readable doubles, and `out` must be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_create(
    shape: *const usize,
    rank: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guarded(|| {
        if shape.is_null() || data.is_null() || out.is_null() || rank == 0 {
            set_error("ps_tensor_create: null argument");
            return PsStatus::NullPointer;
        }
        let shape = unsafe { std::slice::from_raw_parts(shape, rank) };
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        match Tensor::from_data(shape, values) {
            Ok(t) => emit(out, t),
            Err(e) => fail(e),
        }
    })
}

/// Releases a tensor handle. Null is ignored.
///
/// # Safety
/// `t` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_free(t: *mut PsTensor) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Number of axes of the tensor.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_rank(t: *const PsTensor, out: *mut usize) -> PsStatus {
    guarded(|| match (unsafe { tensor_ref(t) }, out.is_null()) {
        (Some(t), false) => {
            unsafe { *out = t.rank() };
            PsStatus::Ok
        }
        _ => {
            set_error("ps_tensor_rank: null argument");
            PsStatus::NullPointer
        }
    })
}

/// Copies the tensor extents into `out`, which must hold `rank` entries.
///
/// # Safety
/// `t` must be valid and `out` writable for `ps_tensor_rank` entries.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_shape(t: *const PsTensor, out: *mut usize) -> PsStatus {
    guarded(|| match (unsafe { tensor_ref(t) }, out.is_null()) {
        (Some(t), false) => {
            let shape = t.shape();
            unsafe { std::ptr::copy_nonoverlapping(shape.as_ptr(), out, shape.len()) };
            PsStatus::Ok
        }
        _ => {
            set_error("ps_tensor_shape: null argument");
            PsStatus::NullPointer
        }
    })
}

/// Total number of elements.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_len(t: *const PsTensor, out: *mut usize) -> PsStatus {
    guarded(|| match (unsafe { tensor_ref(t) }, out.is_null()) {
        (Some(t), false) => {
            unsafe { *out = t.len() };
            PsStatus::Ok
        }
        _ => {
            set_error("ps_tensor_len: null argument");
            PsStatus::NullPointer
        }
    })
}

/// Copies the row-major values into `out`, which must hold `len` doubles.
///
/// # Safety
/// `t` must be valid and `out` writable for `ps_tensor_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_tensor_copy_data(
    t: *const PsTensor,
    out: *mut f64,
    len: usize,
) -> PsStatus {
    guarded(|| match unsafe { tensor_ref(t) } {
        Some(t) if !out.is_null() => {
            if len != t.len() {
                set_error("ps_tensor_copy_data: wrong buffer length");
                return PsStatus::InvalidArgument;
            }
            unsafe { std::ptr::copy_nonoverlapping(t.data().as_ptr(), out, len) };
            PsStatus::Ok
        }
        _ => {
            set_error("ps_tensor_copy_data: null argument");
            PsStatus::NullPointer
        }
    })
}

/// Releases a pooling-indices handle. Null is ignored.
///
/// # Safety
/// `idx` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ps_pool_indices_free(idx: *mut PsPoolIndices) {
    if !idx.is_null() {
        drop(unsafe { Box::from_raw(idx) });
    }
}

fn kernel_from(t: &Tensor) -> Result<ConvKernel, Error> {
    ConvKernel::new(t.clone())
}

/// Valid (no padding) unflipped convolution with square odd kernels.
/// `weights` must be a rank-4 tensor `[c_out, c_in, M, M]`.
///
/// # Safety
/// All handles must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_conv2d_forward(
    x: *const PsTensor,
    weights: *const PsTensor,
    stride: usize,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guarded(|| {
        let (Some(x), Some(w)) = (unsafe { tensor_ref(x) }, unsafe { tensor_ref(weights) }) else {
            set_error("ps_conv2d_forward: null argument");
            return PsStatus::NullPointer;
        };
        if out.is_null() {
            set_error("ps_conv2d_forward: null out pointer");
            return PsStatus::NullPointer;
        }
        let kernel = match kernel_from(w) {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        match conv2d_forward(x, &kernel, stride) {
            Ok(y) => emit(out, y),
            Err(e) => fail(e),
        }
    })
}

/// Applies a Pool Skip variant to a pre-activation map. `inner` is the
/// rank-4 `[C, C, 3, 3]` kernel of the inner convolution. On success both
/// the output map and the pooling indices (for `ps_pool_skip_backward`)
/// are returned.
///
/// # Safety
/// All handles must be valid; `out` and `out_indices` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_pool_skip_forward(
    y: *const PsTensor,
    inner: *const PsTensor,
    e: usize,
    variant: PsVariant,
    out: *mut *mut PsTensor,
    out_indices: *mut *mut PsPoolIndices,
) -> PsStatus {
    guarded(|| {
        let (Some(y), Some(w)) = (unsafe { tensor_ref(y) }, unsafe { tensor_ref(inner) }) else {
            set_error("ps_pool_skip_forward: null argument");
            return PsStatus::NullPointer;
        };
        if out.is_null() || out_indices.is_null() {
            set_error("ps_pool_skip_forward: null out pointer");
            return PsStatus::NullPointer;
        }
        let cfg = match kernel_from(w).and_then(|k| PoolSkipConfig::new(e, variant.into(), k)) {
            Ok(cfg) => cfg,
            Err(e) => return fail(e),
        };
        match pool_skip::forward(y, &cfg) {
            Ok((o, idx)) => {
                unsafe {
                    *out_indices = Box::into_raw(Box::new(PsPoolIndices { inner: idx }));
                }
                emit(out, o)
            }
            Err(e) => fail(e),
        }
    })
}

/// Chain rule through the Pool Skip graph; `indices` must come from the
/// forward call on the same `y`. Writes the gradient with respect to the
/// input and to the inner kernel.
///
/// # Safety
/// All handles must be valid; both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_pool_skip_backward(
    y: *const PsTensor,
    inner: *const PsTensor,
    e: usize,
    variant: PsVariant,
    indices: *const PsPoolIndices,
    grad_out: *const PsTensor,
    out_grad_y: *mut *mut PsTensor,
    out_grad_inner: *mut *mut PsTensor,
) -> PsStatus {
    guarded(|| {
        let (Some(y), Some(w), Some(g)) = (
            unsafe { tensor_ref(y) },
            unsafe { tensor_ref(inner) },
            unsafe { tensor_ref(grad_out) },
        ) else {
            set_error("ps_pool_skip_backward: null argument");
            return PsStatus::NullPointer;
        };
        let Some(idx) = (unsafe { indices.as_ref() }) else {
            set_error("ps_pool_skip_backward: null indices");
            return PsStatus::NullPointer;
        };
        if out_grad_y.is_null() || out_grad_inner.is_null() {
            set_error("ps_pool_skip_backward: null out pointer");
            return PsStatus::NullPointer;
        }
        let cfg = match kernel_from(w).and_then(|k| PoolSkipConfig::new(e, variant.into(), k)) {
            Ok(cfg) => cfg,
            Err(e) => return fail(e),
        };
        match pool_skip::backward(y, &cfg, &idx.inner, g) {
            Ok((gy, gk)) => {
                let status = emit(out_grad_y, gy);
                if status != PsStatus::Ok {
                    return status;
                }
                emit(out_grad_inner, gk)
            }
            Err(e) => fail(e),
        }
    })
}

/// Exact closed-form evaluation of the single-channel composite output from
/// the input `x`, the first convolution `w` (`[1, 1, M, M]`, M odd) and the
/// inner kernel `w_tilde` (`[1, 1, 3, 3]`).
///
/// # Safety
/// All handles must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_pool_skip_closed_form(
    x: *const PsTensor,
    w: *const PsTensor,
    w_tilde: *const PsTensor,
    e: usize,
    out: *mut *mut PsTensor,
) -> PsStatus {
    guarded(|| {
        let (Some(x), Some(w), Some(wt)) = (
            unsafe { tensor_ref(x) },
            unsafe { tensor_ref(w) },
            unsafe { tensor_ref(w_tilde) },
        ) else {
            set_error("ps_pool_skip_closed_form: null argument");
            return PsStatus::NullPointer;
        };
        if out.is_null() {
            set_error("ps_pool_skip_closed_form: null out pointer");
            return PsStatus::NullPointer;
        }
        let kernels = kernel_from(w).and_then(|kw| kernel_from(wt).map(|kt| (kw, kt)));
        let (kw, kt) = match kernels {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        match closed_form(x, &kw, &kt, e) {
            Ok(o) => emit(out, o),
            Err(e) => fail(e),
        }
    })
}

/// Splits the closed-form output into base convolution, affine
/// compensation and dimensional compensation; `out_covered` receives a
/// 0/1 map of positions where the compensated branch condition held.
///
/// # Safety
/// All handles must be valid; the four out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_compensation_decompose(
    x: *const PsTensor,
    w: *const PsTensor,
    w_tilde: *const PsTensor,
    e: usize,
    out_base: *mut *mut PsTensor,
    out_affine: *mut *mut PsTensor,
    out_dimensional: *mut *mut PsTensor,
    out_covered: *mut *mut PsTensor,
) -> PsStatus {
    guarded(|| {
        let (Some(x), Some(w), Some(wt)) = (
            unsafe { tensor_ref(x) },
            unsafe { tensor_ref(w) },
            unsafe { tensor_ref(w_tilde) },
        ) else {
            set_error("ps_compensation_decompose: null argument");
            return PsStatus::NullPointer;
        };
        if out_base.is_null() || out_affine.is_null() || out_dimensional.is_null() || out_covered.is_null() {
            set_error("ps_compensation_decompose: null out pointer");
            return PsStatus::NullPointer;
        }
        let kernels = kernel_from(w).and_then(|kw| kernel_from(wt).map(|kt| (kw, kt)));
        let (kw, kt) = match kernels {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        match compensation_decompose(x, &kw, &kt, e) {
            Ok(rep) => {
                let covered = Tensor::from_data(
                    rep.base.shape(),
                    rep.covered_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                )
                .expect("mask matches base shape");
                let mut status = emit(out_base, rep.base);
                if status == PsStatus::Ok {
                    status = emit(out_affine, rep.affine);
                }
                if status == PsStatus::Ok {
                    status = emit(out_dimensional, rep.dimensional);
                }
                if status == PsStatus::Ok {
                    status = emit(out_covered, covered);
                }
                status
            }
            Err(e) => fail(e),
        }
    })
}

/// Divisibility check of a pool extent against an `H x W` input convolved
/// with an odd `M x M` kernel. Writes a bitmask of violated conditions:
/// bit 0 = H, bit 1 = H-M+1, bit 2 = W, bit 3 = W-M+1. A zero mask means
/// the pool size is valid.
///
/// # Safety
/// `out_mask` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_validate_pool_size(
    h: usize,
    w: usize,
    m: usize,
    e: usize,
    out_mask: *mut u32,
) -> PsStatus {
    guarded(|| {
        if out_mask.is_null() {
            set_error("ps_validate_pool_size: null out pointer");
            return PsStatus::NullPointer;
        }
        if h == 0 || w == 0 || e == 0 || m == 0 || m % 2 == 0 {
            set_error("ps_validate_pool_size: extents must be positive and M odd");
            return PsStatus::InvalidArgument;
        }
        let mut mask = 0u32;
        for v in validate_pool_size(h, w, m, e) {
            mask |= match v {
                pool_skip::PoolSizeViolation::Height => 1,
                pool_skip::PoolSizeViolation::PooledHeight => 2,
                pool_skip::PoolSizeViolation::Width => 4,
                pool_skip::PoolSizeViolation::PooledWidth => 8,
            };
        }
        unsafe { *out_mask = mask };
        PsStatus::Ok
    })
}

/// Hoyer l2/l1 ratio of a tensor's values. Returns `PS_STATUS_UNDEFINED`
/// for an all-zero tensor, leaving `out` untouched.
///
/// # Safety
/// `t` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ps_hoyer_ratio(t: *const PsTensor, out: *mut f64) -> PsStatus {
    guarded(|| match unsafe { tensor_ref(t) } {
        Some(t) if !out.is_null() => match hoyer_ratio(t) {
            Some(r) => {
                unsafe { *out = r };
                PsStatus::Ok
            }
            None => {
                set_error("hoyer ratio undefined for an all-zero tensor");
                PsStatus::Undefined
            }
        },
        _ => {
            set_error("ps_hoyer_ratio: null argument");
            PsStatus::NullPointer
        }
    })
}

/// Fraction of dead units in a `[batch, C, H, W]` pre-activation tensor.
///
/// # Safety
/// `preacts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ps_dead_unit_fraction(
    preacts: *const PsTensor,
    granularity: PsGranularity,
    out: *mut f64,
) -> PsStatus {
    guarded(|| match unsafe { tensor_ref(preacts) } {
        Some(t) if !out.is_null() => {
            if t.rank() < 2 || t.rank() > 4 {
                set_error("ps_dead_unit_fraction: tensor must have rank 2..=4");
                return PsStatus::ShapeMismatch;
            }
            let g = match granularity {
                PsGranularity::Element => Granularity::Element,
                PsGranularity::Channel => Granularity::Channel,
            };
            unsafe { *out = dead_unit_fraction(t, g) };
            PsStatus::Ok
        }
        _ => {
            set_error("ps_dead_unit_fraction: null argument");
            PsStatus::NullPointer
        }
    })
}
