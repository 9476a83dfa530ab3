//! C interface to `bfmlab`.
//!
//! Every function returns a [`BfmStatus`]; on failure a message is available
//! from [`bfm_last_error`] on the calling thread. Datasets and models are
//! opaque handles released with their `_free` function. Panics never cross
//! the boundary; they surface as `BFM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bfmlab::bfm::compute_bfm;
use bfmlab::channel::{load_profile, CsiTensor, SimConfig};
use bfmlab::checkpoint::Checkpoint;
use bfmlab::cmatrix::C64;
use bfmlab::dataset::{generate_dataset, DatasetFile, Split};
use bfmlab::eval;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BfmSplit {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Opaque dataset handle.
pub struct BfmDataset {
    inner: DatasetFile,
}

/// Opaque model handle; weights are held in 64-bit precision.
pub struct BfmModel {
    inner: Checkpoint<f64>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct BfmDatasetInfo {
    pub n_items: usize,
    pub n_samples: usize,
    pub group_size: usize,
    pub f_pad: usize,
    pub n_ant: usize,
    pub scale: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(BfmStatus, String);

fn fail(status: BfmStatus, msg: impl std::fmt::Display) -> Failure {
    Failure(status, msg.to_string())
}

fn record(status: BfmStatus, msg: &str) -> BfmStatus {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => record(BfmStatus::Ok, ""),
        Ok(Err(Failure(status, msg))) => record(status, &msg),
        Err(_) => record(BfmStatus::Panic, "internal panic"),
    }
}

fn io_or_invalid(e: impl std::fmt::Display, io: bool) -> Failure {
    fail(if io { BfmStatus::Io } else { BfmStatus::InvalidArgument }, e)
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(fail(BfmStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(BfmStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(BfmStatus::NullPointer, "output pointer is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn bfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn bfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulate `n_samples` realizations of the named profile (or profile file)
/// and cut them into `group_size`-subcarrier samples.
///
/// # Safety
/// `profile` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_dataset_generate(
    profile: *const c_char,
    n_samples: usize,
    seed: u64,
    group_size: usize,
    out: *mut *mut BfmDataset,
) -> BfmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = std::ptr::null_mut();
        let name = path_arg(profile)?.to_str().unwrap_or_default();
        let profile = load_profile(name).map_err(|e| fail(BfmStatus::InvalidArgument, e))?;
        let config = SimConfig { n_samples, seed, ..SimConfig::default() };
        let data = generate_dataset(&config, &profile, group_size).map_err(|e| fail(BfmStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(BfmDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_dataset_load(path: *const c_char, out: *mut *mut BfmDataset) -> BfmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = std::ptr::null_mut();
        let data = DatasetFile::load(path_arg(path)?).map_err(|e| io_or_invalid(e, true))?;
        *out = Box::into_raw(Box::new(BfmDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bfm_dataset_save(dataset: *const BfmDataset, path: *const c_char) -> BfmStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "dataset is null"))?;
        ds.inner.save(path_arg(path)?).map_err(|e| io_or_invalid(e, true))
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_dataset_info(dataset: *const BfmDataset, out: *mut BfmDatasetInfo) -> BfmStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "dataset is null"))?;
        let m = &ds.inner.manifest;
        *out_arg(out)? = BfmDatasetInfo {
            n_items: m.n_items,
            n_samples: m.n_samples,
            group_size: m.group_size,
            f_pad: m.f_pad,
            n_ant: m.n_ant,
            scale: m.scale,
        };
        Ok(())
    })
}

/// Release a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfm_dataset_free(dataset: *mut BfmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_model_load(path: *const c_char, out: *mut *mut BfmModel) -> BfmStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = std::ptr::null_mut();
        let ck = Checkpoint::<f64>::load(path_arg(path)?).map_err(|e| io_or_invalid(e, true))?;
        *out = Box::into_raw(Box::new(BfmModel { inner: ck }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bfm_model_free(model: *mut BfmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean Frobenius error of `model` over a dataset split.
///
/// # Safety
/// Handles must come from this library; `out_mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_model_evaluate(
    model: *const BfmModel,
    dataset: *const BfmDataset,
    split: BfmSplit,
    out_mean: *mut f64,
) -> BfmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "model is null"))?;
        let ds = dataset.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "dataset is null"))?;
        let out = out_arg(out_mean)?;
        let split = match split {
            BfmSplit::Train => Split::Train,
            BfmSplit::Val => Split::Val,
            BfmSplit::Test => Split::Test,
        };
        let report = eval::evaluate(&m.inner.weights, &m.inner.spec, &ds.inner, split).map_err(|e| match e {
            eval::EvalError::Estimator(_) | eval::EvalError::NonFinite(_) => fail(BfmStatus::Numeric, e),
            _ => fail(BfmStatus::InvalidArgument, e),
        })?;
        *out = report.mean;
        Ok(())
    })
}

/// De-normalized amplitude predictions for one dataset item, `f_pad * n_ant`
/// values written to `out` (padding bins included).
///
/// # Safety
/// Handles must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bfm_model_predict(
    model: *const BfmModel,
    dataset: *const BfmDataset,
    item: usize,
    out: *mut f64,
    len: usize,
) -> BfmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "model is null"))?;
        let ds = dataset.as_ref().ok_or_else(|| fail(BfmStatus::NullPointer, "dataset is null"))?;
        if out.is_null() {
            return Err(fail(BfmStatus::NullPointer, "output buffer is null"));
        }
        if item >= ds.inner.n_items() {
            return Err(fail(BfmStatus::InvalidArgument, format!("item {item} out of range")));
        }
        let need = ds.inner.f_pad() * ds.inner.n_ant();
        if len < need {
            return Err(fail(BfmStatus::InvalidArgument, format!("buffer holds {len} values, need {need}")));
        }
        let pred = eval::predict(&m.inner.weights, &m.inner.spec, &ds.inner, &[item]).map_err(|e| match e {
            eval::EvalError::Estimator(bfmlab::nn::EstimatorError::NonFinite { .. }) => fail(BfmStatus::Numeric, e),
            _ => fail(BfmStatus::InvalidArgument, e),
        })?;
        let scale = ds.inner.manifest.scale;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, p) in dst.iter_mut().zip(&pred) {
            *d = p * scale;
        }
        Ok(())
    })
}

/// Phase-normalized right-singular matrices of `n_sub` square channel
/// matrices. `h` holds `n_sub * n * n` interleaved `(re, im)` pairs, row
/// major per subcarrier; `v_out` receives the same layout.
///
/// # Safety
/// `h` and `v_out` must each hold `2 * n_sub * n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bfm_compute_bfm(h: *const f64, n: usize, n_sub: usize, v_out: *mut f64) -> BfmStatus {
    guard(|| {
        if h.is_null() || v_out.is_null() {
            return Err(fail(BfmStatus::NullPointer, "buffer is null"));
        }
        if n == 0 || n_sub == 0 {
            return Err(fail(BfmStatus::InvalidArgument, "dimensions must be positive"));
        }
        let count = n_sub
            .checked_mul(n * n)
            .and_then(|c| c.checked_mul(2))
            .ok_or_else(|| fail(BfmStatus::InvalidArgument, "dimensions overflow"))?;
        let raw = std::slice::from_raw_parts(h, count);
        let csi = CsiTensor {
            n_rx: n,
            n_tx: n,
            subcarriers: (0..n_sub as i32).collect(),
            h: raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect(),
        };
        let bfm = compute_bfm(&csi).map_err(|e| fail(BfmStatus::Numeric, e))?;
        let dst = std::slice::from_raw_parts_mut(v_out, count);
        for (d, v) in dst.chunks_exact_mut(2).zip(&bfm.v) {
            d[0] = v.re;
            d[1] = v.im;
        }
        Ok(())
    })
}

/// Subcarrier-averaged Frobenius error of `(len / n_ant, n_ant)` amplitude
/// arrays.
///
/// # Safety
/// `predicted` and `truth` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bfm_frobenius_error(
    predicted: *const f64,
    truth: *const f64,
    len: usize,
    n_ant: usize,
    out: *mut f64,
) -> BfmStatus {
    guard(|| {
        if predicted.is_null() || truth.is_null() {
            return Err(fail(BfmStatus::NullPointer, "buffer is null"));
        }
        let out = out_arg(out)?;
        let p = std::slice::from_raw_parts(predicted, len);
        let t = std::slice::from_raw_parts(truth, len);
        *out = eval::frobenius_error(p, t, n_ant).map_err(|e| fail(BfmStatus::InvalidArgument, e))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(bfm_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(BfmStatus::Ok as i32, 0);
        assert_eq!(BfmStatus::Io as i32, 3);
        assert_eq!(BfmStatus::Numeric as i32, 4);
        assert_eq!(BfmStatus::Panic as i32, 5);
    }

    #[test]
    fn errors_set_and_clear_message() {
        let mut out = 0.0;
        let s = unsafe { bfm_frobenius_error([1.0].as_ptr(), [1.0].as_ptr(), 1, 0, &mut out) };
        assert_eq!(s, BfmStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        let s = unsafe { bfm_frobenius_error([1.0; 4].as_ptr(), [0.0; 4].as_ptr(), 4, 4, &mut out) };
        assert_eq!(s, BfmStatus::Ok);
        assert_eq!(out, 2.0);
        assert!(last_error().is_empty());
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(bfm_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
