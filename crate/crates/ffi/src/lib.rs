//! C ABI over `srl-core`.
//!
//! Every fallible function returns an [`SrlStatus`]. On failure the message is
//! kept per thread and can be read with [`srl_last_error_message`]. Objects are
//! opaque handles created by `*_load`/`*_new` functions and released by the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use srl::diff::Tensor;
use srl::geometry::{self, EpsilonTube, SphereSample};
use srl::io::Checkpoint;
use srl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Data = 4,
    Numeric = 5,
    Schema = 6,
    Io = 7,
    Panic = 8,
}

/// A trained model loaded from a checkpoint.
pub struct SrlModel {
    inner: Checkpoint,
}

/// Points drawn uniformly from the unit hypersphere.
pub struct SrlSphere {
    inner: SphereSample,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SrlStatus {
    match e {
        Error::Shape(_) => SrlStatus::Shape,
        Error::Invalid(_) => SrlStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::Degenerate { .. } | Error::Numeric(_) => SrlStatus::Numeric,
        Error::Data(_) | Error::Csv(_) => SrlStatus::Data,
        Error::Schema { .. } | Error::Json(_) => SrlStatus::Schema,
        Error::Io { .. } => SrlStatus::Io,
    }
}

struct Fail(SrlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SrlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SrlStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SrlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Tensor, Fail> {
    let len = rows.checked_mul(cols).ok_or_else(|| Fail(SrlStatus::InvalidArgument, format!("{what} too large")))?;
    let data = slice(p, len, what)?.to_vec();
    Ok(Tensor::matrix(rows, cols, data)?)
}

fn write_out(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Fail> {
    if dst.len() < src.len() {
        return Err(Fail(SrlStatus::Shape, format!("{what} holds {} values, {} needed", dst.len(), src.len())));
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn srl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn srl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn srl_model_load(path: *const c_char, out: *mut *mut SrlModel) -> SrlStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(SrlStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = Checkpoint::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(SrlModel { inner }));
        Ok(())
    })
}

/// Decodes a checkpoint held in memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut SrlModel) -> SrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = slice(bytes, len, "bytes")?;
        let inner = Checkpoint::from_bytes(b, Path::new("<memory>"))?;
        *out = Box::into_raw(Box::new(SrlModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `srl_model_load` or `srl_model_from_bytes` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srl_model_free(model: *mut SrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl_model_input_dim(model: *const SrlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.model.encoder.in_dim())
}

/// Representation width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl_model_rep_dim(model: *const SrlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.model.rep_dim())
}

/// Predicts `rows` targets in original units from a row-major `rows x cols` block.
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn srl_model_predict(
    model: *const SrlModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> SrlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = matrix(x, rows, cols, "x")?;
        let preds = m.inner.predict(&x)?;
        write_out(slice_mut(out, out_len, "out")?, &preds, "out")
    })
}

/// Writes the unit-norm representations, `rows x rep_dim` row-major.
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn srl_model_encode(
    model: *const SrlModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> SrlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = matrix(x, rows, cols, "x")?;
        if cols != m.inner.model.encoder.in_dim() {
            return Err(Fail(
                SrlStatus::Shape,
                format!("x has {cols} columns, model expects {}", m.inner.model.encoder.in_dim()),
            ));
        }
        let z = m.inner.model.encode(&x)?;
        write_out(slice_mut(out, out_len, "out")?, z.data(), "out")
    })
}

/// Draws `n` points uniformly on the unit sphere in `d` dimensions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl_sphere_new(n: usize, d: usize, seed: u64, out: *mut *mut SrlSphere) -> SrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = geometry::sample_hypersphere(n, d, seed)?;
        *out = Box::into_raw(Box::new(SrlSphere { inner }));
        Ok(())
    })
}

/// # Safety
/// `sphere` must come from `srl_sphere_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srl_sphere_free(sphere: *mut SrlSphere) {
    if !sphere.is_null() {
        drop(Box::from_raw(sphere));
    }
}

/// Copies the `n x d` sample, row-major.
///
/// # Safety
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn srl_sphere_points(sphere: *const SrlSphere, out: *mut f64, out_len: usize) -> SrlStatus {
    guard(|| {
        let s = sphere.as_ref().ok_or_else(|| null("sphere"))?;
        write_out(slice_mut(out, out_len, "out")?, s.inner.points.data(), "out")
    })
}

/// Enveloping loss of `k` unit centroids of width `d` against the sample.
///
/// # Safety
/// `centroids` must hold `k * d` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl_enveloping_loss(
    sphere: *const SrlSphere,
    centroids: *const f64,
    k: usize,
    d: usize,
    out: *mut f64,
) -> SrlStatus {
    guard(|| {
        let s = sphere.as_ref().ok_or_else(|| null("sphere"))?;
        let c = matrix(centroids, k, d, "centroids")?;
        let v = geometry::enveloping_loss(&s.inner, &c)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Fraction of the sample within cosine `epsilon` of some centroid.
///
/// # Safety
/// `centroids` must hold `k * d` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl_coverage(
    sphere: *const SrlSphere,
    centroids: *const f64,
    k: usize,
    d: usize,
    epsilon: f64,
    out: *mut f64,
) -> SrlStatus {
    guard(|| {
        let s = sphere.as_ref().ok_or_else(|| null("sphere"))?;
        let c = matrix(centroids, k, d, "centroids")?;
        let v = geometry::coverage_at_epsilon(&s.inner, &c, EpsilonTube::new(epsilon)?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Homogeneity loss of `k` ordered unit centroids with strictly increasing labels.
///
/// # Safety
/// `centroids` must hold `k * d` values, `labels` `k` values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl_homogeneity_loss(
    centroids: *const f64,
    labels: *const f64,
    k: usize,
    d: usize,
    out: *mut f64,
) -> SrlStatus {
    guard(|| {
        let c = matrix(centroids, k, d, "centroids")?;
        let l = slice(labels, k, "labels")?;
        let v = geometry::homogeneity_loss(&c, l)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
