//! C interface to the attention kernels, metrics and trained models.
//!
//! Every function returns an [`LstaStatus`]. On failure the thread-local
//! message from [`lsta_last_error`] describes the cause. Tensors are
//! row-major `float` buffers; masks are `uint8_t` buffers of 0/1 values.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lsta_core::data::{metric_f, metric_j, Mask};
use lsta_core::ltm::{build_memory, exact_attention_oracle, linear_attention, make_projection_basis, ProjectionBasis};
use lsta_core::model::checkpoint;
use lsta_core::model::{ModelParams, Segmenter};
use lsta_core::sta::local_attention;
use lsta_core::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LstaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Parse = 4,
    Io = 5,
    Numeric = 6,
    Config = 7,
    Contract = 8,
    Panic = 9,
}

/// Random-feature projection basis.
pub struct LstaBasis {
    inner: ProjectionBasis<f32>,
}

/// Trained model loaded from a checkpoint directory.
pub struct LstaModel {
    params: ModelParams<f32>,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LstaStatus {
    match e {
        Error::Shape(_) => LstaStatus::Shape,
        Error::Argument(_) => LstaStatus::InvalidArgument,
        Error::Contract(_) => LstaStatus::Contract,
        Error::Parse { .. } => LstaStatus::Parse,
        Error::Config(_) => LstaStatus::Config,
        Error::Numeric(_) => LstaStatus::Numeric,
        Error::Io { .. } => LstaStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LstaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LstaStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LstaStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            LstaStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn checked_len(dims: &[usize]) -> Result<usize, Fail> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Fail::Core(Error::arg("buffer size overflows")))
}

fn tensor(data: &[f32], shape: &[usize]) -> Result<Tensor<f32>, Fail> {
    Ok(Tensor::new(shape.to_vec(), data.to_vec())?)
}

fn mask(bits: &[u8], h: usize, w: usize) -> Result<Mask, Fail> {
    Ok(Mask::new(h, w, bits.iter().map(|&b| (b != 0) as u8).collect())?)
}

/// Message describing the most recent failure on this thread, or an empty
/// string. Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn lsta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Draws the projection basis for `c` channels from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lsta_basis_new(c: usize, seed: u64, out: *mut *mut LstaBasis) -> LstaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let inner = make_projection_basis(c, seed)?;
        *out = Box::into_raw(Box::new(LstaBasis { inner }));
        Ok(())
    })
}

/// Number of random features of `basis`, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle from [`lsta_basis_new`].
#[no_mangle]
pub unsafe extern "C" fn lsta_basis_features(basis: *const LstaBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.inner.features())
}

/// # Safety
/// `basis` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsta_basis_free(basis: *mut LstaBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Normalized memory read-out for `q[hw×c]` against `m[nhw×c]` into
/// `out[hw×c]`. With `exact` nonzero the quadratic reference is used.
///
/// # Safety
/// Buffers must hold the stated number of floats; `basis` must be live.
#[no_mangle]
pub unsafe extern "C" fn lsta_global_attention(
    basis: *const LstaBasis,
    q: *const f32,
    hw: usize,
    m: *const f32,
    nhw: usize,
    c: usize,
    exact: i32,
    out: *mut f32,
) -> LstaStatus {
    guard(|| {
        let basis = basis.as_ref().ok_or(Fail::Null("basis"))?;
        let q = tensor(slice(q, checked_len(&[hw, c])?, "q")?, &[hw, c])?;
        let m = tensor(slice(m, checked_len(&[nhw, c])?, "m")?, &[nhw, c])?;
        let out = slice_mut(out, checked_len(&[hw, c])?, "out")?;
        let g = if exact != 0 {
            exact_attention_oracle(&q, &m, &basis.inner)?
        } else {
            linear_attention(&q, &build_memory(std::slice::from_ref(&m))?, &basis.inner)?
        };
        out.copy_from_slice(g.data());
        Ok(())
    })
}

/// Windowed attention of `query[h×w×c]` over `neighbor[h×w×c]` with
/// window `k` and stride `d`, written to `out[h×w×c]`.
///
/// # Safety
/// Buffers must hold `h*w*c` floats each.
#[no_mangle]
pub unsafe extern "C" fn lsta_local_attention(
    query: *const f32,
    neighbor: *const f32,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    d: usize,
    out: *mut f32,
) -> LstaStatus {
    guard(|| {
        let n = checked_len(&[h, w, c])?;
        let q = tensor(slice(query, n, "query")?, &[h, w, c])?;
        let y = tensor(slice(neighbor, n, "neighbor")?, &[h, w, c])?;
        let out = slice_mut(out, n, "out")?;
        out.copy_from_slice(local_attention(&q, &y, k, d)?.data());
        Ok(())
    })
}

/// Region similarity of two `h×w` masks.
///
/// # Safety
/// `pred` and `gt` must hold `h*w` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsta_metric_j(pred: *const u8, gt: *const u8, h: usize, w: usize, out: *mut f64) -> LstaStatus {
    guard(|| {
        let n = checked_len(&[h, w])?;
        let p = mask(slice(pred, n, "pred")?, h, w)?;
        let g = mask(slice(gt, n, "gt")?, h, w)?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = metric_j(&p, &g)?;
        Ok(())
    })
}

/// Boundary F-measure of two `h×w` masks with tolerance `tol_px`.
///
/// # Safety
/// `pred` and `gt` must hold `h*w` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsta_metric_f(
    pred: *const u8,
    gt: *const u8,
    h: usize,
    w: usize,
    tol_px: usize,
    out: *mut f64,
) -> LstaStatus {
    guard(|| {
        let n = checked_len(&[h, w])?;
        let p = mask(slice(pred, n, "pred")?, h, w)?;
        let g = mask(slice(gt, n, "gt")?, h, w)?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = metric_f(&p, &g, tol_px)?;
        Ok(())
    })
}

/// Loads a checkpoint directory. Inference uses the basis drawn from
/// `seed`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsta_model_load(dir: *const c_char, seed: u64, out: *mut *mut LstaModel) -> LstaStatus {
    guard(|| {
        if dir.is_null() {
            return Err(Fail::Null("dir"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Error::arg("checkpoint path is not UTF-8"))?;
        let loaded = checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(LstaModel {
            params: loaded.state.params,
            seed,
        }));
        Ok(())
    })
}

/// Segments `frames` consecutive `h×w×3` frames (values in `[0, 1]`) into
/// `masks[frames×h×w]`.
///
/// # Safety
/// `model` must be live; buffers must hold the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn lsta_model_segment(
    model: *const LstaModel,
    pixels: *const f32,
    frames: usize,
    h: usize,
    w: usize,
    masks: *mut u8,
) -> LstaStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Fail::Null("model"))?;
        let per = checked_len(&[h, w, 3])?;
        let pix = slice(pixels, checked_len(&[frames, per])?, "pixels")?;
        let out = slice_mut(masks, checked_len(&[frames, h, w])?, "masks")?;
        let clip = pix
            .chunks(per.max(1))
            .take(frames)
            .map(|f| tensor(f, &[h, w, 3]))
            .collect::<Result<Vec<_>, _>>()?;
        let basis = make_projection_basis(model.params.config.c, model.seed)?;
        let seg = Segmenter::new(&model.params, basis)?;
        for (dst, m) in out.chunks_mut((h * w).max(1)).zip(seg.masks(&clip)?) {
            dst.copy_from_slice(m.bits());
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsta_model_free(model: *mut LstaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsta_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version"),
    };
    V.as_ptr()
}
