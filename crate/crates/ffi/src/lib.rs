//! C ABI over ctrforge checkpoints.
//!
//! A caller loads a checkpoint into an opaque [`CtrModel`], asks for the field
//! order, and scores rows given as strings in that order. Every fallible call
//! returns a [`CtrStatus`]; the message of the last failure on the calling
//! thread is available from [`ctrforge_last_error`].

use std::borrow::Cow;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ctrforge::features::{FieldSource, RawValue};
use ctrforge::metrics::{self, MetricError};
use ctrforge::models::BatchInput;
use ctrforge::train::{Checkpoint, CheckpointError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Encode = 5,
    UndefinedMetric = 6,
    Panic = 7,
}

/// A loaded checkpoint. Read-only after load, so one handle may be shared
/// between threads for prediction.
pub struct CtrModel {
    checkpoint: Checkpoint,
    field_names: Vec<CString>,
}

type Failure = (CtrStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CtrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CtrStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CtrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (CtrStatus::NullPointer, format!("{what} is null"))
}

fn checkpoint_failure(e: CheckpointError) -> Failure {
    let status = match e {
        CheckpointError::Io { .. } => CtrStatus::Io,
        _ => CtrStatus::Format,
    };
    (status, e.to_string())
}

fn metric_failure(e: MetricError) -> Failure {
    let status = match e {
        MetricError::UndefinedAuc(_) => CtrStatus::UndefinedMetric,
        _ => CtrStatus::InvalidArgument,
    };
    (status, e.to_string())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CtrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

struct StrRow<'a> {
    names: &'a [CString],
    values: &'a [&'a str],
}

impl FieldSource for StrRow<'_> {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        let i = self.names.iter().position(|n| n.as_bytes() == field.as_bytes())?;
        Some(RawValue::Text(Cow::Borrowed(self.values[i])))
    }
}

/// Version string of this library, static and NUL-terminated.
#[no_mangle]
pub extern "C" fn ctrforge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ctrforge_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file. On success `*out` owns a handle that must be
/// released with `ctrforge_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_model_load(path: *const c_char, out: *mut *mut CtrModel) -> CtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path)).map_err(checkpoint_failure)?;
        let field_names = checkpoint
            .encoder()
            .schema()
            .fields()
            .iter()
            .map(|f| CString::new(f.name.as_str()).expect("field names have no NUL"))
            .collect();
        *out = Box::into_raw(Box::new(CtrModel { checkpoint, field_names }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from `ctrforge_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_model_free(model: *mut CtrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input fields a row must supply, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_model_num_fields(model: *const CtrModel) -> usize {
    model.as_ref().map_or(0, |m| m.field_names.len())
}

/// Name of field `index`, or NULL when out of range. Owned by the handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_model_field_name(model: *const CtrModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.field_names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Scores `num_rows` rows. `values` holds `num_rows * num_fields` strings,
/// row-major, in field order; numeric fields are decimal text. Unknown
/// categorical values map to the out-of-vocabulary slot. Click probabilities
/// are written to `out[0..num_rows]`.
///
/// # Safety
/// `model` must be a live handle, `values` must point to that many
/// NUL-terminated strings and `out` to `num_rows` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_model_predict(
    model: *const CtrModel,
    values: *const *const c_char,
    num_rows: usize,
    out: *mut f64,
) -> CtrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if num_rows == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let width = model.field_names.len();
        let cells = input(values, num_rows * width, "values")?;
        let encoder = model.checkpoint.encoder();
        let schema = encoder.schema();
        let (mut categorical, mut numeric) = (
            Vec::with_capacity(num_rows * schema.num_categorical()),
            Vec::with_capacity(num_rows * schema.num_numeric()),
        );
        let mut row = Vec::with_capacity(width);
        for r in 0..num_rows {
            row.clear();
            for (i, &p) in cells[r * width..(r + 1) * width].iter().enumerate() {
                let name = model.field_names[i].to_str().unwrap_or("?");
                row.push(c_str(p, &format!("row {r} field {name}"))?);
            }
            let src = StrRow { names: &model.field_names, values: &row };
            encoder
                .encode_into(&src, &mut categorical, &mut numeric)
                .map_err(|e| (CtrStatus::Encode, format!("row {r}: {e}")))?;
        }
        let batch = BatchInput { len: num_rows, categorical: &categorical, numeric: &numeric };
        let probs = model.checkpoint.net().predict(model.checkpoint.params(), &batch, 2048);
        slice::from_raw_parts_mut(out, num_rows).copy_from_slice(&probs);
        Ok(())
    })
}

/// Rank AUC with midrank ties. Labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must point to `n` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_auc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> CtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (s, y) = (input(scores, n, "scores")?, input(labels, n, "labels")?);
        *out = metrics::auc(s, y).map_err(metric_failure)?;
        Ok(())
    })
}

/// Root-mean-square error between predictions and labels.
///
/// # Safety
/// `predictions` and `labels` must point to `n` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn ctrforge_rmse(predictions: *const f64, labels: *const f64, n: usize, out: *mut f64) -> CtrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (p, y) = (input(predictions, n, "predictions")?, input(labels, n, "labels")?);
        *out = metrics::rmse(p, y).map_err(metric_failure)?;
        Ok(())
    })
}
