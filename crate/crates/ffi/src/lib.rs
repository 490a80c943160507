//! C ABI for robust-se.
//!
//! Every fallible function returns an [`RseStatus`]. On failure the message
//! is available from [`rse_last_error`] on the same thread until the next
//! call into the library. Panics are caught at the boundary and reported as
//! `RSE_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use robust_se::dsp::{StftConfig, Waveform};
use robust_se::eval;
use robust_se::loss::{self, Aggregation, AggregationSpec, Distance, ErrorTensor};
use robust_se::model::MaskNet;
use robust_se::train::Checkpoint;
use robust_se::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Load = 4,
    Shape = 5,
    SilentReference = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// A loaded enhancement model. Create with `rse_model_load`, release with
/// `rse_model_free`.
pub struct RseModel {
    net: MaskNet,
    stft: StftConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> RseStatus {
    match e {
        Error::Config(_) | Error::Recipe(_) | Error::Manifest(_) => RseStatus::Config,
        Error::Load { .. } | Error::Io(_) | Error::Json(_) | Error::Wav(_) | Error::SampleRate { .. } => {
            RseStatus::Load
        }
        Error::Shape(_) | Error::Length { .. } => RseStatus::Shape,
        Error::SilentReference | Error::DegenerateNoise => RseStatus::SilentReference,
        Error::NonFiniteLoss { .. } => RseStatus::Internal,
    }
}

struct Fail(RseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> RseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RseStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            RseStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> FfiResult {
    if p.is_null() {
        Err(Fail(RseStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RseStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn rse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn rse_status_str(status: RseStatus) -> *const c_char {
    let s: &'static CStr = match status {
        RseStatus::Ok => c"ok",
        RseStatus::NullPointer => c"null pointer",
        RseStatus::InvalidArgument => c"invalid argument",
        RseStatus::Config => c"invalid configuration",
        RseStatus::Load => c"load failure",
        RseStatus::Shape => c"shape mismatch",
        RseStatus::SilentReference => c"zero-energy signal",
        RseStatus::BufferTooSmall => c"output buffer too small",
        RseStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file. On success `*out` owns a new model.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rse_model_load(path: *const c_char, out: *mut *mut RseModel) -> RseStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        let model = RseModel {
            net: ck.model()?,
            stft: ck.stft,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `rse_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rse_model_free(model: *mut RseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output branches (1 for traditional models, 3 for MixIT).
///
/// # Safety
/// `model` must be a live model or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn rse_model_outputs(model: *const RseModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.cfg.n_outputs)
}

/// Enhance `len` samples. Writes `outputs × len` samples to `out`, branch
/// after branch; branch 0 is the speech estimate. `out_len` is the capacity
/// of `out` in samples.
///
/// # Safety
/// `input` must hold `len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rse_model_enhance(
    model: *const RseModel,
    input: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
    out_len: usize,
) -> RseStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &*model;
        let x = slice(input, len, "input")?;
        let need = len * m.net.cfg.n_outputs;
        if out_len < need {
            return Err(Fail(
                RseStatus::BufferTooSmall,
                format!("output needs {need} samples, buffer holds {out_len}"),
            ));
        }
        non_null(out, "out")?;
        let w = Waveform::new(x.to_vec(), sample_rate)?;
        let branches = eval::enhance(&m.net, &m.stft, &w)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, b) in dst.chunks_mut(len).zip(&branches) {
            chunk.copy_from_slice(&b.samples);
        }
        Ok(())
    })
}

/// Scale-invariant SDR of `est` against `reference`, in dB.
///
/// # Safety
/// Both arrays must hold `len` doubles; `out_db` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rse_si_sdr(
    est: *const f64,
    reference: *const f64,
    len: usize,
    out_db: *mut f64,
) -> RseStatus {
    guard(|| {
        non_null(out_db, "out_db")?;
        let e = slice(est, len, "est")?;
        let r = slice(reference, len, "reference")?;
        *out_db = eval::si_sdr(e, r)?;
        Ok(())
    })
}

/// Aggregate a `k × t × f` error tensor (row-major) with the named order,
/// e.g. "sample_median_tf_mean". `trim_fraction` is used only by the
/// trimmed-mean order.
///
/// # Safety
/// `errors` must hold `k·t·f` doubles; `order` must be NUL-terminated;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rse_aggregate(
    errors: *const f64,
    k: usize,
    t: usize,
    f: usize,
    order: *const c_char,
    trim_fraction: f64,
    out: *mut f64,
) -> RseStatus {
    guard(|| {
        non_null(out, "out")?;
        if k == 0 || t == 0 || f == 0 {
            return Err(Fail(RseStatus::Shape, "dimensions must be positive".into()));
        }
        let n = k
            .checked_mul(t)
            .and_then(|v| v.checked_mul(f))
            .ok_or_else(|| Fail(RseStatus::Shape, "dimensions overflow".into()))?;
        let values = slice(errors, n, "errors")?;
        let order: Aggregation = c_str(order, "order")?.parse()?;
        let spec = AggregationSpec { order, trim_fraction };
        spec.validate()?;
        let grid = ndarray::Array3::from_shape_vec((k, t, f), values.to_vec())
            .map_err(|e| Fail(RseStatus::Shape, e.to_string()))?;
        let e = ErrorTensor {
            values: grid,
            distance: Distance::Mse,
        };
        *out = loss::aggregate(&e, &spec);
        Ok(())
    })
}
