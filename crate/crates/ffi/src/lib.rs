//! C ABI for loading trained checkpoints and querying the posterior.
//!
//! All functions return a status code (`PALEOGP_OK` on success); models are
//! opaque handles created by [`paleogp_model_load`] and released with
//! [`paleogp_model_free`]. The last error message is kept per thread and can
//! be fetched with [`paleogp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;

use paleogp::checkpoint::Checkpoint;
use paleogp::training::FittedModel;

pub const PALEOGP_OK: i32 = 0;
/// Invalid input: bad arguments, null pointers, malformed files.
pub const PALEOGP_ERR_INPUT: i32 = 2;
/// Numerical failure inside the model.
pub const PALEOGP_ERR_NUMERICAL: i32 = 3;
/// I/O failure.
pub const PALEOGP_ERR_IO: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code_of(e: &paleogp::Error) -> i32 {
    // the CLI exit-code contract doubles as the FFI status contract
    e.exit_code()
}

/// Opaque trained-model handle.
pub struct PaleogpModel {
    inner: FittedModel,
}

/// Load a model from a checkpoint file. On success writes a handle to
/// `out_model`; the caller owns it and must free it with
/// `paleogp_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_model` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn paleogp_model_load(
    path: *const c_char,
    out_model: *mut *mut PaleogpModel,
) -> i32 {
    if path.is_null() || out_model.is_null() {
        set_error("null argument");
        return PALEOGP_ERR_INPUT;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return PALEOGP_ERR_INPUT;
        }
    };
    let model = Checkpoint::load(Path::new(path)).and_then(|ck| ck.to_model());
    match model {
        Ok(inner) => {
            *out_model = Box::into_raw(Box::new(PaleogpModel { inner }));
            PALEOGP_OK
        }
        Err(e) => {
            set_error(e.to_string());
            code_of(&e)
        }
    }
}

/// Posterior predictive at `n` points. `points` holds `3 * n` doubles laid
/// out as (lon, lat, age_bp) triples; each output array holds `n` doubles.
/// Any output pointer may be null to skip that quantity.
///
/// # Safety
/// `model` must come from `paleogp_model_load`; array arguments must match
/// the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn paleogp_model_predict(
    model: *const PaleogpModel,
    points: *const f64,
    n: usize,
    out_mean: *mut f64,
    out_std_latent: *mut f64,
    out_std_predictive: *mut f64,
) -> i32 {
    if model.is_null() || (points.is_null() && n > 0) {
        set_error("null argument");
        return PALEOGP_ERR_INPUT;
    }
    let flat = std::slice::from_raw_parts(points, 3 * n);
    let pts: Vec<(f64, f64, f64)> = flat.chunks_exact(3).map(|c| (c[0], c[1], c[2])).collect();
    match (*model).inner.predict(&pts) {
        Ok(preds) => {
            for (i, p) in preds.iter().enumerate() {
                if !out_mean.is_null() {
                    *out_mean.add(i) = p.mean;
                }
                if !out_std_latent.is_null() {
                    *out_std_latent.add(i) = p.var_latent.sqrt();
                }
                if !out_std_predictive.is_null() {
                    *out_std_predictive.add(i) = p.var_observation.sqrt();
                }
            }
            PALEOGP_OK
        }
        Err(e) => {
            set_error(e.to_string());
            code_of(&e)
        }
    }
}

/// Number of spatial inducing points (M_s), or a negative error code.
///
/// # Safety
/// `model` must come from `paleogp_model_load`.
#[no_mangle]
pub unsafe extern "C" fn paleogp_model_num_inducing(model: *const PaleogpModel) -> i64 {
    if model.is_null() {
        set_error("null argument");
        return -(PALEOGP_ERR_INPUT as i64);
    }
    (*model).inner.hyper.inducing.m_s() as i64
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `paleogp_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn paleogp_model_free(model: *mut PaleogpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copy the calling thread's last error message (NUL-terminated, truncated
/// to `len`) into `buf`. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes (or be null with
/// `len == 0` to query the length).
#[no_mangle]
pub unsafe extern "C" fn paleogp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
