//! C ABI over the `eastnet` library.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an
//! [`EastnetStatus`]; on failure [`eastnet_last_error`] describes the error
//! for the calling thread. Configuration is passed as `key = value` text in
//! the same format the command-line tool reads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eastnet::config::RunConfig;
use eastnet::data::{generate_synthetic, read_dataset, write_dataset, Dataset, Prepared};
use eastnet::memory::{export_memory, import_memory, TransferMode};
use eastnet::models::{build_variant, load_checkpoint, save_checkpoint, Model};
use eastnet::tensor::Tensor;
use eastnet::train::{evaluate, train, Metrics};
use eastnet::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EastnetStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Io = 3,
    Numeric = 4,
    Shape = 5,
    Contract = 6,
    Format = 7,
    IncompatibleMemory = 8,
    InvalidUtf8 = 9,
    Panic = 10,
}

/// Test-split scores in raw units. `has_mape` is 0 when no target passed
/// the MAPE mask, in which case `mape` is NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EastnetMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub has_mape: i32,
}

/// Window geometry of a model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EastnetModelDims {
    pub input_len: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub channels: usize,
    pub covariate_width: usize,
}

/// Opaque dataset handle.
pub struct EastnetDataset(Dataset);

/// Opaque model handle.
pub struct EastnetModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EastnetStatus {
    match e {
        Error::Shape { .. } => EastnetStatus::Shape,
        Error::Contract(_) => EastnetStatus::Contract,
        Error::Format { .. } => EastnetStatus::Format,
        Error::IncompatibleMemory { .. } => EastnetStatus::IncompatibleMemory,
        Error::Numeric(_) => EastnetStatus::Numeric,
        Error::Config(_) => EastnetStatus::Config,
        Error::Io(_) => EastnetStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> Outcome<()>) -> EastnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EastnetStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            EastnetStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(&format!("{what} is not valid UTF-8"));
            EastnetStatus::InvalidUtf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            EastnetStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn config(p: *const c_char) -> Outcome<RunConfig> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::parse(text(p, "config")?)?)
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Outcome<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Outcome<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome<()> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_c(m: &Metrics) -> EastnetMetrics {
    EastnetMetrics {
        rmse: m.rmse,
        mae: m.mae,
        mape: m.mape.unwrap_or(f64::NAN),
        has_mape: m.mape.is_some() as i32,
    }
}

fn prepared(model: &Model, data: &Dataset) -> Outcome<Prepared> {
    let s = model.spec();
    Ok(Prepared::new(data, s.input_len, s.horizon)?)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn eastnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generate a synthetic dataset from `data.*` and `event.*` keys. A null
/// `config` selects the standard dataset.
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_dataset_generate(
    config: *const c_char,
    out: *mut *mut EastnetDataset,
) -> EastnetStatus {
    guard(|| {
        let cfg = self::config(config)?;
        let data = generate_synthetic(&cfg.synthetic_config()?)?;
        put(out, EastnetDataset(data))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_dataset_read(
    path: *const c_char,
    out: *mut *mut EastnetDataset,
) -> EastnetStatus {
    guard(|| {
        let data = read_dataset(&PathBuf::from(text(path, "path")?))?;
        put(out, EastnetDataset(data))
    })
}

/// # Safety
/// `dataset` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eastnet_dataset_write(
    dataset: *const EastnetDataset,
    path: *const c_char,
) -> EastnetStatus {
    guard(|| {
        let d = deref(dataset, "dataset")?;
        write_dataset(&PathBuf::from(text(path, "path")?), &d.0)?;
        Ok(())
    })
}

/// Slot, region and channel counts. Any output pointer may be null.
///
/// # Safety
/// `dataset` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn eastnet_dataset_dims(
    dataset: *const EastnetDataset,
    slots: *mut usize,
    nodes: *mut usize,
    channels: *mut usize,
) -> EastnetStatus {
    guard(|| {
        let t = &deref(dataset, "dataset")?.0.tensor;
        for (p, v) in [
            (slots, t.slots()),
            (nodes, t.nodes()),
            (channels, t.channels()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn eastnet_dataset_free(dataset: *mut EastnetDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Build an untrained model of `model.variant` sized for `dataset`, seeded
/// with `seed`.
///
/// # Safety
/// `config` must be null or NUL-terminated; `dataset` must come from this
/// library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_new(
    config: *const c_char,
    dataset: *const EastnetDataset,
    out: *mut *mut EastnetModel,
) -> EastnetStatus {
    guard(|| {
        let cfg = self::config(config)?;
        let t = &deref(dataset, "dataset")?.0;
        let spec = cfg.variant_spec(
            cfg.model.variant,
            t.tensor.nodes(),
            t.tensor.channels(),
            t.covariates.slots_per_day,
        );
        put(out, EastnetModel(build_variant(spec)?))
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_load(
    path: *const c_char,
    out: *mut *mut EastnetModel,
) -> EastnetStatus {
    guard(|| {
        let model = load_checkpoint(&PathBuf::from(text(path, "path")?))?;
        put(out, EastnetModel(model))
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_save(
    model: *const EastnetModel,
    path: *const c_char,
) -> EastnetStatus {
    guard(|| {
        save_checkpoint(
            &deref(model, "model")?.0,
            &PathBuf::from(text(path, "path")?),
        )?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_dims(
    model: *const EastnetModel,
    out: *mut EastnetModelDims,
) -> EastnetStatus {
    guard(|| {
        let s = deref(model, "model")?.0.spec();
        *deref_mut(out, "dims")? = EastnetModelDims {
            input_len: s.input_len,
            horizon: s.horizon,
            nodes: s.nodes,
            channels: s.channels,
            covariate_width: s.cov_width,
        };
        Ok(())
    })
}

/// Train with early stopping using the `train.*` keys and `seed` of
/// `config`, then write test-split scores to `out` (which may be null).
///
/// # Safety
/// Handles must come from this library; `config` must be null or
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_train(
    model: *mut EastnetModel,
    dataset: *const EastnetDataset,
    config: *const c_char,
    out: *mut EastnetMetrics,
) -> EastnetStatus {
    guard(|| {
        let cfg = self::config(config)?;
        let m = &mut deref_mut(model, "model")?.0;
        let prep = prepared(m, &deref(dataset, "dataset")?.0)?;
        let report = train(m, &prep, &cfg.train_config())?;
        if let Some(o) = out.as_mut() {
            *o = to_c(&report.test);
        }
        Ok(())
    })
}

/// Score the model on the test split of `dataset`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_evaluate(
    model: *const EastnetModel,
    dataset: *const EastnetDataset,
    out: *mut EastnetMetrics,
) -> EastnetStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let prep = prepared(m, &deref(dataset, "dataset")?.0)?;
        let eval = evaluate(m, &prep, &prep.test)?;
        *deref_mut(out, "metrics")? = to_c(&eval.metrics);
        Ok(())
    })
}

/// Forecast one window in normalized units. `inputs` holds
/// `input_len * nodes * channels` values, `covariates` holds
/// `(input_len + horizon) * covariate_width` values and `out` receives
/// `horizon * nodes * channels` values, all row-major.
///
/// # Safety
/// Each buffer must hold at least its stated length.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_forecast(
    model: *const EastnetModel,
    inputs: *const f64,
    inputs_len: usize,
    covariates: *const f64,
    covariates_len: usize,
    out: *mut f64,
    out_len: usize,
) -> EastnetStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let s = m.spec();
        if inputs.is_null() || covariates.is_null() || out.is_null() {
            return Err(Failure::Null("buffer"));
        }
        let want = [
            s.input_len * s.nodes * s.channels,
            (s.input_len + s.horizon) * s.cov_width,
            s.horizon * s.nodes * s.channels,
        ];
        if [inputs_len, covariates_len, out_len] != want {
            return Err(Error::Contract(format!(
                "buffer lengths {:?} do not match expected {want:?}",
                [inputs_len, covariates_len, out_len]
            ))
            .into());
        }
        let x = Tensor::new(
            &[s.input_len, s.nodes, s.channels],
            std::slice::from_raw_parts(inputs, inputs_len).to_vec(),
        )?;
        let c = Tensor::new(
            &[s.input_len + s.horizon, s.cov_width],
            std::slice::from_raw_parts(covariates, covariates_len).to_vec(),
        )?;
        let f = m.forecast(&x, &c)?;
        ptr::copy_nonoverlapping(f.values.data().as_ptr(), out, out_len);
        Ok(())
    })
}

/// Write the memory snapshot of a memory variant.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_export_memory(
    model: *const EastnetModel,
    path: *const c_char,
) -> EastnetStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let bank = m
            .memory_bank()
            .ok_or_else(|| Error::Config(format!("{} has no memory bank", m.kind())))?;
        export_memory(m.store(), bank, &PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Load a memory snapshot; `retrain` 0 freezes it, nonzero keeps it
/// trainable. On failure the model is unchanged.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_import_memory(
    model: *mut EastnetModel,
    path: *const c_char,
    retrain: i32,
) -> EastnetStatus {
    guard(|| {
        let m = &mut deref_mut(model, "model")?.0;
        let bank = m
            .memory_bank()
            .cloned()
            .ok_or_else(|| Error::Config(format!("{} has no memory bank", m.kind())))?;
        let mode = if retrain != 0 {
            TransferMode::Retrain
        } else {
            TransferMode::Freeze
        };
        import_memory(
            m.store_mut(),
            &bank,
            &PathBuf::from(text(path, "path")?),
            mode,
        )?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn eastnet_model_free(model: *mut EastnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
