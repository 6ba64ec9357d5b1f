//! C ABI for the pqrst ECG delineation toolkit.
//!
//! Conventions:
//! - Objects are opaque handles created and destroyed by this library;
//!   pass them back only to `pqrst_*` functions.
//! - Functions return [`PqrstStatus`]; on anything but `OK` the
//!   thread-local message from [`pqrst_last_error_message`] describes
//!   the failure.
//! - Strings returned as `*mut c_char` are owned by the caller and must
//!   be released with [`pqrst_string_free`]. `pqrst_version` and
//!   `pqrst_last_error_message` return borrowed pointers that must not
//!   be freed.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pqrst::config::ToolkitConfig;
use pqrst::error::Error;
use pqrst::model::{load_checkpoint, ModelParams};
use pqrst::pipeline::predict_record;
use pqrst::selftrain::delineation_scores;
use pqrst::signal_io::{
    read_annotations, read_record, synth_record, write_annotations, write_record,
    AnnotationSet, EcgRecord, SynthSpec, WaveClass,
};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqrstStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Filesystem access failed.
    IoError = 3,
    /// Input failed validation (malformed file, bad config, bad value).
    ValidationError = 4,
    /// The library panicked; state may be inconsistent.
    Panic = 5,
}

/// Wave classes exposed through [`PqrstSegment`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqrstWaveClass {
    P = 0,
    Qrs = 1,
    T = 2,
}

/// One delineated segment, in sample indices of its record.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PqrstSegment {
    pub class: PqrstWaveClass,
    pub onset: u64,
    pub offset: u64,
    /// Only meaningful when `has_confidence` is true.
    pub confidence: f64,
    pub has_confidence: bool,
}

/// Opaque multi-lead ECG record.
pub struct PqrstRecord {
    inner: EcgRecord,
}

/// Opaque segment annotation set.
pub struct PqrstAnnotations {
    inner: AnnotationSet,
}

/// Opaque trained model plus the pipeline configuration used to run it.
pub struct PqrstModel {
    params: ModelParams,
    config: ToolkitConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PqrstStatus {
    match err {
        Error::Io { .. } => PqrstStatus::IoError,
        _ => PqrstStatus::ValidationError,
    }
}

fn catch(f: impl FnOnce() -> PqrstStatus + std::panic::UnwindSafe) -> PqrstStatus {
    match catch_unwind(f) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&message);
            PqrstStatus::Panic
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, PqrstStatus> {
    if ptr.is_null() {
        set_error("path argument is null");
        return Err(PqrstStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path argument is not valid UTF-8");
            Err(PqrstStatus::InvalidUtf8)
        }
    }
}

macro_rules! require_nonnull {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!($name, " is null"));
            return PqrstStatus::NullArgument;
        }
    };
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn pqrst_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message describing this thread's most recent failure; borrowed,
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pqrst_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string previously returned by this library.
///
/// # Safety
/// `s` must be a pointer obtained from a `pqrst_*` function that
/// transfers string ownership, or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a record directory (`header.json` + `signal.bin`).
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_read(
    path: *const c_char,
    out: *mut *mut PqrstRecord,
) -> PqrstStatus {
    require_nonnull!(out, "out");
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    catch(AssertUnwindSafe(|| match read_record(&path) {
        Ok(record) => {
            *out = Box::into_raw(Box::new(PqrstRecord { inner: record }));
            PqrstStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }))
}

/// Writes a record as a record directory.
///
/// # Safety
/// `record` must be a live handle from this library; `path` a valid C
/// string.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_write(
    record: *const PqrstRecord,
    path: *const c_char,
) -> PqrstStatus {
    require_nonnull!(record, "record");
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    catch(AssertUnwindSafe(|| {
        match write_record(&(*record).inner, &path) {
            Ok(()) => PqrstStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Generates a synthetic record with known ground truth. Either output
/// pointer may be null when that side is not needed.
///
/// # Safety
/// `id` must be a valid C string or null; non-null outputs must be
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_synth(
    duration_s: f64,
    sampling_rate_hz: u32,
    heart_rate_bpm: f64,
    n_leads: u32,
    noise_mv: f64,
    seed: u64,
    id: *const c_char,
    out_record: *mut *mut PqrstRecord,
    out_truth: *mut *mut PqrstAnnotations,
) -> PqrstStatus {
    let id = if id.is_null() {
        "synth".to_string()
    } else {
        match CStr::from_ptr(id).to_str() {
            Ok(s) => s.to_string(),
            Err(_) => {
                set_error("id is not valid UTF-8");
                return PqrstStatus::InvalidUtf8;
            }
        }
    };
    catch(AssertUnwindSafe(|| {
        let spec = SynthSpec {
            duration_s,
            sampling_rate_hz,
            heart_rate_bpm,
            n_leads: n_leads as usize,
            noise_amplitude_mv: noise_mv,
            seed,
            ..SynthSpec::default()
        };
        match synth_record(&spec, &id) {
            Ok((record, truth)) => {
                if !out_record.is_null() {
                    *out_record = Box::into_raw(Box::new(PqrstRecord { inner: record }));
                }
                if !out_truth.is_null() {
                    *out_truth = Box::into_raw(Box::new(PqrstAnnotations { inner: truth }));
                }
                PqrstStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Number of leads; 0 for a null handle.
///
/// # Safety
/// `record` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_n_leads(record: *const PqrstRecord) -> u32 {
    if record.is_null() {
        return 0;
    }
    (*record).inner.n_leads() as u32
}

/// Samples per lead; 0 for a null handle.
///
/// # Safety
/// `record` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_n_samples(record: *const PqrstRecord) -> u64 {
    if record.is_null() {
        return 0;
    }
    (*record).inner.n_samples() as u64
}

/// Sampling rate in Hz; 0 for a null handle.
///
/// # Safety
/// `record` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_sampling_rate(record: *const PqrstRecord) -> u32 {
    if record.is_null() {
        return 0;
    }
    (*record).inner.sampling_rate_hz
}

/// Copies one lead's samples (millivolts) into a caller buffer of
/// `buffer_len` floats.
///
/// # Safety
/// `record` must be a live handle; `buffer` must point to at least
/// `buffer_len` floats.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_copy_lead(
    record: *const PqrstRecord,
    lead: u32,
    buffer: *mut f32,
    buffer_len: usize,
) -> PqrstStatus {
    require_nonnull!(record, "record");
    require_nonnull!(buffer, "buffer");
    let inner = &(*record).inner;
    let Some(samples) = inner.samples.get(lead as usize) else {
        set_error("lead index out of range");
        return PqrstStatus::ValidationError;
    };
    if buffer_len < samples.len() {
        set_error("buffer too small for the lead");
        return PqrstStatus::ValidationError;
    }
    std::ptr::copy_nonoverlapping(samples.as_ptr(), buffer, samples.len());
    PqrstStatus::Ok
}

/// Releases a record handle.
///
/// # Safety
/// `record` must be a handle from this library or null; do not use it
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn pqrst_record_free(record: *mut PqrstRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// Loads a model checkpoint directory. `config_path` may be null for the
/// default pipeline configuration, or name a toolkit TOML file.
///
/// # Safety
/// Paths must be valid C strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pqrst_model_load(
    checkpoint_dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut PqrstModel,
) -> PqrstStatus {
    require_nonnull!(out, "out");
    let ckpt = match path_arg(checkpoint_dir) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let config_path = if config_path.is_null() {
        None
    } else {
        match path_arg(config_path) {
            Ok(p) => Some(p),
            Err(status) => return status,
        }
    };
    catch(AssertUnwindSafe(|| {
        let load = || -> Result<PqrstModel, Error> {
            let (params, _) = load_checkpoint(&ckpt)?;
            let mut config = match &config_path {
                Some(p) => ToolkitConfig::load(p)?,
                None => ToolkitConfig::default(),
            };
            config.model = params.config.clone();
            config.validate()?;
            Ok(PqrstModel { params, config })
        };
        match load() {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                PqrstStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Runs delineation on a record: preprocessing, the network, decoding,
/// and post-processing.
///
/// # Safety
/// `model` and `record` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pqrst_model_predict(
    model: *const PqrstModel,
    record: *const PqrstRecord,
    out: *mut *mut PqrstAnnotations,
) -> PqrstStatus {
    require_nonnull!(model, "model");
    require_nonnull!(record, "record");
    require_nonnull!(out, "out");
    catch(AssertUnwindSafe(|| {
        let m = &*model;
        match predict_record(
            &m.params,
            &(*record).inner,
            &m.config.grid,
            &m.config.stft,
            m.config.sample_rate_hz,
        ) {
            Ok((annotations, _)) => {
                *out = Box::into_raw(Box::new(PqrstAnnotations { inner: annotations }));
                PqrstStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Per-class delineation scores of a record: mean and population std of
/// |0.5 - confidence| over the grid intervals. Both output arrays hold
/// 3 values in P, QRS, T order.
///
/// # Safety
/// `model` and `record` must be live handles; the outputs must each
/// point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn pqrst_model_delineation_scores(
    model: *const PqrstModel,
    record: *const PqrstRecord,
    out_means: *mut f64,
    out_stds: *mut f64,
) -> PqrstStatus {
    require_nonnull!(model, "model");
    require_nonnull!(record, "record");
    require_nonnull!(out_means, "out_means");
    require_nonnull!(out_stds, "out_stds");
    catch(AssertUnwindSafe(|| {
        let m = &*model;
        match predict_record(
            &m.params,
            &(*record).inner,
            &m.config.grid,
            &m.config.stft,
            m.config.sample_rate_hz,
        ) {
            Ok((_, grid)) => {
                let scores = delineation_scores(&grid);
                for (i, s) in scores.iter().enumerate() {
                    *out_means.add(i) = s.mean;
                    *out_stds.add(i) = s.std;
                }
                PqrstStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Releases a model handle.
///
/// # Safety
/// `model` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_model_free(model: *mut PqrstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reads a `.delin.json` annotation file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_read(
    path: *const c_char,
    out: *mut *mut PqrstAnnotations,
) -> PqrstStatus {
    require_nonnull!(out, "out");
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    catch(AssertUnwindSafe(|| match read_annotations(&path) {
        Ok(set) => {
            *out = Box::into_raw(Box::new(PqrstAnnotations { inner: set }));
            PqrstStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }))
}

/// Writes annotations as `.delin.json`.
///
/// # Safety
/// `annotations` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_write(
    annotations: *const PqrstAnnotations,
    path: *const c_char,
) -> PqrstStatus {
    require_nonnull!(annotations, "annotations");
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    catch(AssertUnwindSafe(|| {
        match write_annotations(&(*annotations).inner, &path) {
            Ok(()) => PqrstStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Number of segments; 0 for a null handle.
///
/// # Safety
/// `annotations` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_len(annotations: *const PqrstAnnotations) -> usize {
    if annotations.is_null() {
        return 0;
    }
    (*annotations).inner.segments.len()
}

/// Copies segment `index` into `out`.
///
/// # Safety
/// `annotations` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_segment(
    annotations: *const PqrstAnnotations,
    index: usize,
    out: *mut PqrstSegment,
) -> PqrstStatus {
    require_nonnull!(annotations, "annotations");
    require_nonnull!(out, "out");
    let inner = &(*annotations).inner;
    let Some(seg) = inner.segments.get(index) else {
        set_error("segment index out of range");
        return PqrstStatus::ValidationError;
    };
    *out = PqrstSegment {
        class: match seg.wave_class {
            WaveClass::P => PqrstWaveClass::P,
            WaveClass::Qrs => PqrstWaveClass::Qrs,
            WaveClass::T => PqrstWaveClass::T,
        },
        onset: seg.onset as u64,
        offset: seg.offset as u64,
        confidence: seg.confidence.unwrap_or(f64::NAN),
        has_confidence: seg.confidence.is_some(),
    };
    PqrstStatus::Ok
}

/// Serializes annotations to a JSON string owned by the caller (release
/// with [`pqrst_string_free`]).
///
/// # Safety
/// `annotations` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_to_json(
    annotations: *const PqrstAnnotations,
    out: *mut *mut c_char,
) -> PqrstStatus {
    require_nonnull!(annotations, "annotations");
    require_nonnull!(out, "out");
    catch(AssertUnwindSafe(|| {
        let set = &(*annotations).inner;
        let json = serde_json::json!({
            "record_id": set.record_id,
            "segments": set.segments,
        });
        match CString::new(json.to_string()) {
            Ok(s) => {
                *out = s.into_raw();
                PqrstStatus::Ok
            }
            Err(_) => {
                set_error("annotations contain an interior NUL");
                PqrstStatus::ValidationError
            }
        }
    }))
}

/// Releases an annotations handle.
///
/// # Safety
/// `annotations` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn pqrst_annotations_free(annotations: *mut PqrstAnnotations) {
    if !annotations.is_null() {
        drop(Box::from_raw(annotations));
    }
}
