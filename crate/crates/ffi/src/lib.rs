//! C interface to `fsc-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`FscStatus`]; on failure [`fsc_last_error`] describes what went wrong
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fsc_core::geom::PointCloud;
use fsc_core::model::{checkpoint, Model, ModelConfig, Preset};
use fsc_core::FscError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Numeric = 5,
    Checkpoint = 6,
    Panic = 7,
}

/// A point cloud.
pub struct FscCloud(PointCloud);

/// A completion network.
pub struct FscModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &FscError) -> FscStatus {
    match e {
        FscError::Io { .. } | FscError::Parse { .. } => FscStatus::Io,
        FscError::Config(_) | FscError::SizeMismatch { .. } => FscStatus::Config,
        FscError::Checkpoint(_) => FscStatus::Checkpoint,
        FscError::NonFiniteGradient(_)
        | FscError::NonFiniteLoss(_)
        | FscError::DegenerateExtent
        | FscError::NotNormalized { .. } => FscStatus::Numeric,
        _ => FscStatus::InvalidArgument,
    }
}

struct Failure(FscStatus, String);

impl From<FscError> for Failure {
    fn from(e: FscError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FscStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FscStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            FscStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FscStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a cloud from `n` points stored as `x0 y0 z0 x1 ...`.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_cloud_new(xyz: *const f64, n: usize, out: *mut *mut FscCloud) -> FscStatus {
    guard(|| {
        if xyz.is_null() && n > 0 {
            return Err(null("xyz"));
        }
        let flat = if n == 0 { &[][..] } else { std::slice::from_raw_parts(xyz, 3 * n) };
        store(out, FscCloud(PointCloud::from_flat(flat)?))
    })
}

/// Reads a PLY cloud.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_cloud_read(path: *const c_char, out: *mut *mut FscCloud) -> FscStatus {
    guard(|| {
        let path = path_arg(path)?;
        store(out, FscCloud(fsc_core::geom::ply::read_cloud(&path)?))
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsc_cloud_len(cloud: *const FscCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coordinates into `xyz`, which holds `capacity` points.
///
/// # Safety
/// `cloud` must be a live handle and `xyz` must have room for `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fsc_cloud_copy_points(cloud: *const FscCloud, xyz: *mut f64, capacity: usize) -> FscStatus {
    guard(|| {
        let c = deref(cloud, "cloud")?;
        if c.0.len() > capacity {
            return Err(Failure(
                FscStatus::InvalidArgument,
                format!("buffer holds {capacity} points, cloud has {}", c.0.len()),
            ));
        }
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let flat = c.0.to_flat();
        ptr::copy_nonoverlapping(flat.as_ptr(), xyz, flat.len());
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsc_cloud_free(cloud: *mut FscCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Symmetric Chamfer distance with L1 point distances.
///
/// # Safety
/// `a`, `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_chamfer_l1(a: *const FscCloud, b: *const FscCloud, out: *mut f64) -> FscStatus {
    guard(|| {
        let v = fsc_core::metrics::chamfer_l1(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Exact earth mover's distance between clouds of equal size.
///
/// # Safety
/// `a`, `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_emd(a: *const FscCloud, b: *const FscCloud, out: *mut f64) -> FscStatus {
    guard(|| {
        let (v, _) = fsc_core::metrics::emd(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Freshly initialized network. `preset` is "tiny" or "full".
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_model_new(preset: *const c_char, seed: u64, out: *mut *mut FscModel) -> FscStatus {
    guard(|| {
        if preset.is_null() {
            return Err(null("preset"));
        }
        let name = CStr::from_ptr(preset).to_string_lossy();
        let preset: Preset = name.parse()?;
        store(out, FscModel(Model::new(ModelConfig::preset(preset), seed)?))
    })
}

/// Loads a model checkpoint or the generator of a training state.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_model_load(path: *const c_char, out: *mut *mut FscModel) -> FscStatus {
    guard(|| {
        let path = path_arg(path)?;
        store(out, FscModel(checkpoint::load_model(&path)?))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fsc_model_save(model: *const FscModel, path: *const c_char) -> FscStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let path = path_arg(path)?;
        Ok(checkpoint::save_model(&path, &m.0)?)
    })
}

/// Number of points produced by [`fsc_complete`], or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fsc_model_output_points(model: *const FscModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.m_detail())
}

/// Completes `input` into a new cloud of [`fsc_model_output_points`] points.
///
/// # Safety
/// `model`, `input` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fsc_complete(
    model: *const FscModel,
    input: *const FscCloud,
    out: *mut *mut FscCloud,
) -> FscStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = deref(input, "input")?;
        let y = m.0.complete(&x.0)?;
        store(out, FscCloud(y.y_detail))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsc_model_free(model: *mut FscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
