//! C ABI for the motion forecasting model: opaque handles, integer status
//! codes, and a thread-local last-error message. The header lives at
//! `include/pgformer.h` (generated with cbindgen when available).
//!
//! All pose buffers are dense row-major f64 millimeters laid out as
//! `[frames][persons][joints][3]`, matching the motion-file binary block.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pgformer::model::PGformer;
use pgformer::numerics::Tensor;
use pgformer::pose::{PoseSequence, Scene};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgfStatus {
    PgfOk = 0,
    PgfErrNullArgument = 1,
    PgfErrInvalidUtf8 = 2,
    PgfErrIo = 3,
    PgfErrFormat = 4,
    PgfErrShape = 5,
    PgfErrContract = 6,
    PgfErrPanic = 7,
}

/// Opaque model handle.
pub struct PgfModel {
    inner: PGformer,
}

/// Basic shape facts about a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PgfModelInfo {
    /// Input frames the model consumes per pass (T).
    pub history_frames: usize,
    /// Frames produced per pass (K).
    pub horizon_frames: usize,
    /// Joints per person (J).
    pub joints: usize,
    /// Model width (D).
    pub width: usize,
    /// Encoder/decoder layers (L).
    pub layers: usize,
    pub fps: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &pgformer::Error) -> PgfStatus {
    use pgformer::Error;
    match err {
        Error::Io(_) => PgfStatus::PgfErrIo,
        Error::Parse(_) | Error::Config(_) => PgfStatus::PgfErrFormat,
        Error::Dim { .. } => PgfStatus::PgfErrShape,
        _ => PgfStatus::PgfErrContract,
    }
}

fn guard<F: FnOnce() -> PgfStatus>(f: F) -> PgfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            PgfStatus::PgfErrPanic
        }
    }
}

/// The last error message on this thread, or null. Owned by the library;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pgf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn pgf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a model checkpoint from `path` into a new handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pgf_model_load(path: *const c_char, out: *mut *mut PgfModel) -> PgfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument".into());
            return PgfStatus::PgfErrNullArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid utf-8".into());
                return PgfStatus::PgfErrInvalidUtf8;
            }
        };
        match PGformer::load_from_path(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(PgfModel { inner: model })) };
                PgfStatus::PgfOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a handle returned by `pgf_model_load`.
///
/// # Safety
/// `model` must be null or a pointer from `pgf_model_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn pgf_model_free(model: *mut PgfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Fill `info` with the model's shape parameters.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pgf_model_info(
    model: *const PgfModel,
    info: *mut PgfModelInfo,
) -> PgfStatus {
    guard(|| {
        if model.is_null() || info.is_null() {
            set_error("null argument".into());
            return PgfStatus::PgfErrNullArgument;
        }
        let cfg = unsafe { &*model }.inner.config();
        unsafe {
            *info = PgfModelInfo {
                history_frames: cfg.history,
                horizon_frames: cfg.horizon,
                joints: cfg.joints,
                width: cfg.width,
                layers: cfg.layers,
                fps: cfg.fps,
            };
        }
        PgfStatus::PgfOk
    })
}

/// Forecast `horizon_frames` future frames from a pose history.
///
/// `history` holds `frames * persons * joints * 3` doubles laid out
/// `[frames][persons][joints][3]`; `frames` must be at least the model's
/// history length and `joints` must match the model. The output buffer
/// receives `horizon_frames * persons * joints * 3` doubles in the same
/// layout.
///
/// # Safety
/// `history` and `out` must point to buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn pgf_predict(
    model: *const PgfModel,
    history: *const f64,
    frames: usize,
    persons: usize,
    joints: usize,
    horizon_frames: usize,
    out: *mut f64,
) -> PgfStatus {
    guard(|| {
        if model.is_null() || history.is_null() || out.is_null() {
            set_error("null argument".into());
            return PgfStatus::PgfErrNullArgument;
        }
        if frames == 0 || persons < 2 || joints == 0 || horizon_frames == 0 {
            set_error(format!(
                "invalid dimensions: frames={frames}, persons={persons}, joints={joints}, horizon={horizon_frames}"
            ));
            return PgfStatus::PgfErrShape;
        }
        let model = unsafe { &(*model).inner };
        let n = frames * persons * joints * 3;
        let data = unsafe { std::slice::from_raw_parts(history, n) };
        // Regroup frame-major input into per-person tracks.
        let mut tracks = vec![Vec::with_capacity(frames * joints * 3); persons];
        for t in 0..frames {
            for (p, track) in tracks.iter_mut().enumerate() {
                let base = (t * persons + p) * joints * 3;
                track.extend_from_slice(&data[base..base + joints * 3]);
            }
        }
        let scene = match build_scene(tracks, frames, joints, model.config().fps) {
            Ok(s) => s,
            Err(e) => {
                set_error(e.to_string());
                return status_of(&e);
            }
        };
        let result = if horizon_frames <= model.config().horizon {
            model.predict(&scene).map(|s| s.segment(0, horizon_frames))
        } else {
            model.predict_recursive(&scene, horizon_frames)
        };
        match result {
            Ok(pred) => {
                let out_n = horizon_frames * persons * joints * 3;
                let out_slice = unsafe { std::slice::from_raw_parts_mut(out, out_n) };
                for t in 0..horizon_frames {
                    for (p, person) in pred.persons.iter().enumerate() {
                        for j in 0..joints {
                            let v = person.joint(t, j);
                            let base = ((t * persons + p) * joints + j) * 3;
                            out_slice[base..base + 3].copy_from_slice(&v);
                        }
                    }
                }
                PgfStatus::PgfOk
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

fn build_scene(
    tracks: Vec<Vec<f64>>,
    frames: usize,
    joints: usize,
    fps: f64,
) -> pgformer::Result<Scene> {
    let persons = tracks
        .into_iter()
        .map(|track| PoseSequence::new(Tensor::new(vec![frames, joints, 3], track)?, fps))
        .collect::<pgformer::Result<Vec<_>>>()?;
    Scene::new(persons)
}
