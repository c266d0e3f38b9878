//! C interface: create a model from JSON, load `STEIN1` weights, predict
//! change masks and query its size. Every call returns a status code; the
//! message of the most recent failure on the calling thread is available
//! through [`stf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use steinformer::harness::config::config_from_value;
use steinformer::harness::train::argmax_maps;
use steinformer::model::{estimate_flops, weights, SteinFormer};
use steinformer::nn::{Mode, Module};
use steinformer::tensor::no_grad;
use steinformer::{Error, Tensor};

/// Result of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StfStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    NullArgument = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct StfModel {
    model: SteinFormer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> StfStatus {
    match e.exit_code() {
        2 => StfStatus::Config,
        3 => StfStatus::Data,
        4 => StfStatus::Numeric,
        _ => StfStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StfStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer passed as {what}"));
            StfStatus::NullArgument
        }
        Err(_) => {
            set_error("internal panic");
            StfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::config(format!("{what} is not valid UTF-8"))))
}

/// Build a model from an experiment configuration in JSON (`"{}"` for the
/// defaults). Writes the new handle to `out`; free it with [`stf_model_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stf_model_create(config_json: *const c_char, out: *mut *mut StfModel) -> StfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let value = serde_json::from_str(text).map_err(|e| Error::config(format!("config JSON: {e}")))?;
        let cfg = config_from_value(value, &[], None)?;
        let model = SteinFormer::new(&cfg.model)?;
        *out = Box::into_raw(Box::new(StfModel { model }));
        Ok(())
    })
}

/// Replace the model's weights with those of a `STEIN1` file.
///
/// # Safety
/// `model` must come from [`stf_model_create`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stf_model_load_weights(model: *mut StfModel, path: *const c_char) -> StfStatus {
    guard(|| {
        let m = model.as_mut().ok_or(Failure::Null("model"))?;
        let p = str_arg(path, "path")?;
        weights::load(&mut m.model, Path::new(p))?;
        Ok(())
    })
}

/// Change mask for one image pair. `t1` and `t2` hold `3 × height × width`
/// channel-major values in `[0, 1]`; `out_mask` receives `height × width`
/// bytes, 1 for changed pixels.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn stf_model_predict(
    model: *const StfModel,
    t1: *const f32,
    t2: *const f32,
    height: usize,
    width: usize,
    out_mask: *mut u8,
) -> StfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if t1.is_null() || t2.is_null() || out_mask.is_null() {
            return Err(Failure::Null("image or mask buffer"));
        }
        let n = 3 * height * width;
        let a: Vec<f64> = std::slice::from_raw_parts(t1, n).iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = std::slice::from_raw_parts(t2, n).iter().map(|&v| v as f64).collect();
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::data("input images contain non-finite values").into());
        }
        let shape = [1, 3, height, width];
        let (x1, x2) = (Tensor::new(a, &shape)?, Tensor::new(b, &shape)?);
        let logits = no_grad(|| m.model.forward(&x1, &x2, Mode::Eval))?.logits;
        let mask = argmax_maps(&logits)?.remove(0);
        std::slice::from_raw_parts_mut(out_mask, height * width).copy_from_slice(&mask);
        Ok(())
    })
}

/// Number of learnable parameters.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stf_model_count_params(model: *const StfModel, out: *mut u64) -> StfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let o = out.as_mut().ok_or(Failure::Null("out"))?;
        *o = m.model.num_params() as u64;
        Ok(())
    })
}

/// Forward-pass FLOPs for a `height × width` image pair.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn stf_model_flops(model: *const StfModel, height: usize, width: usize, out: *mut u64) -> StfStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let o = out.as_mut().ok_or(Failure::Null("out"))?;
        *o = estimate_flops(&m.model.cfg, height, width)?.0;
        Ok(())
    })
}

/// Release a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`stf_model_create`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stf_model_free(model: *mut StfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, or 0 when
/// no error has been recorded.
///
/// # Safety
/// `buf` must be valid for `len` bytes, or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn stf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
