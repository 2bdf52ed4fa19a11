//! C ABI over `mireg`.
//!
//! Objects cross the boundary as opaque heap handles released with the
//! matching `*_free`. Every fallible call returns a [`MiregStatus`]; on
//! failure [`mireg_last_error_message`] describes the error for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mireg::config::RunConfig;
use mireg::estimate::{run_pipeline, FeatureSource, RegistrationResult};
use mireg::featnet::{load_checkpoint, NetParams};
use mireg::geom::{Correspondence, LabeledScene, Vec3};
use mireg::scenegen::{generate_scene, GenConfig};
use mireg::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    MissingModel = 5,
    MissingLabels = 6,
    Computation = 7,
    Panic = 8,
}

/// Source of the correspondence embeddings.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiregMode {
    /// Trained network; requires a model handle.
    Deep = 0,
    /// Spatial consistency only.
    Beta = 1,
    /// Ground-truth labels; requires a labeled scene.
    Oracle = 2,
}

/// A set of putative correspondences, optionally with ground truth.
pub struct MiregScene {
    inner: LabeledScene,
}

/// Trained embedding network.
pub struct MiregModel {
    inner: NetParams,
}

/// Output of one registration.
pub struct MiregResult {
    inner: RegistrationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MiregStatus {
    match e {
        Error::Io(_) => MiregStatus::Io,
        Error::Json(_) | Error::InvalidScene(_) | Error::Checkpoint(_) => MiregStatus::Parse,
        Error::InvalidConfig(_) | Error::InfeasibleConfig(_) | Error::ShapeMismatch(_) => MiregStatus::InvalidArgument,
        Error::MissingModel => MiregStatus::MissingModel,
        Error::MissingLabels => MiregStatus::MissingLabels,
        _ => MiregStatus::Computation,
    }
}

struct Fail(MiregStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MiregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MiregStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            MiregStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MiregStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(MiregStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mireg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mireg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a scene JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_load(path: *const c_char, out: *mut *mut MiregScene) -> MiregStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, MiregScene { inner: LabeledScene::load(p)? })
    })
}

/// Builds an unlabeled scene from `n` source and `n` target points, each
/// given as `3 * n` packed doubles.
///
/// # Safety
/// `source` and `target` must point to `3 * n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_from_points(
    source: *const f64,
    target: *const f64,
    n: usize,
    out: *mut *mut MiregScene,
) -> MiregStatus {
    guard(|| {
        if source.is_null() || target.is_null() {
            return Err(null("point array"));
        }
        if n == 0 {
            return Err(Fail(MiregStatus::InvalidArgument, "need at least one correspondence".into()));
        }
        let xs = std::slice::from_raw_parts(source, 3 * n);
        let ys = std::slice::from_raw_parts(target, 3 * n);
        let corrs = xs
            .chunks_exact(3)
            .zip(ys.chunks_exact(3))
            .map(|(x, y)| Correspondence::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(y[0], y[1], y[2])))
            .collect();
        put(out, MiregScene { inner: LabeledScene::unlabeled(corrs)? })
    })
}

/// Generates a labeled synthetic scene with default generator settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_generate(seed: u64, out: *mut *mut MiregScene) -> MiregStatus {
    guard(|| put(out, MiregScene { inner: generate_scene(&GenConfig { seed, ..GenConfig::default() })? }))
}

/// Number of correspondences, or 0 for NULL.
///
/// # Safety
/// `scene` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_len(scene: *const MiregScene) -> usize {
    scene.as_ref().map_or(0, |s| s.inner.correspondences.len())
}

/// Number of ground-truth instances, or 0 for NULL or unlabeled scenes.
///
/// # Safety
/// `scene` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_num_instances(scene: *const MiregScene) -> usize {
    scene.as_ref().map_or(0, |s| s.inner.gt_transforms.len())
}

/// # Safety
/// `scene` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mireg_scene_free(scene: *mut MiregScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mireg_model_load(path: *const c_char, out: *mut *mut MiregModel) -> MiregStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, MiregModel { inner: load_checkpoint(p)?.params })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mireg_model_free(model: *mut MiregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the registration pipeline.
///
/// `config_json` may be NULL for defaults; otherwise it is a run
/// configuration document. `model` may be NULL unless `mode` is Deep.
///
/// # Safety
/// Handles must be live, `config_json` NULL or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mireg_register(
    scene: *const MiregScene,
    model: *const MiregModel,
    mode: MiregMode,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut MiregResult,
) -> MiregStatus {
    guard(|| {
        let scene = scene.as_ref().ok_or_else(|| null("scene"))?;
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Fail(MiregStatus::InvalidArgument, "config is not UTF-8".into()))?;
            RunConfig::from_json(text)?
        };
        let source = match mode {
            MiregMode::Deep => FeatureSource::Deep(&model.as_ref().ok_or(Error::MissingModel)?.inner),
            MiregMode::Beta => FeatureSource::Beta,
            MiregMode::Oracle => FeatureSource::Oracle,
        };
        put(out, MiregResult { inner: run_pipeline(&scene.inner, source, &cfg.pipeline(), seed)? })
    })
}

/// Number of recovered transforms, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mireg_result_num_transforms(result: *const MiregResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.transforms.len())
}

/// Copies transform `index` as a row-major 3x3 rotation and a translation.
///
/// # Safety
/// `rotation` must hold 9 doubles and `translation` 3.
#[no_mangle]
pub unsafe extern "C" fn mireg_result_transform(
    result: *const MiregResult,
    index: usize,
    rotation: *mut f64,
    translation: *mut f64,
) -> MiregStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if rotation.is_null() || translation.is_null() {
            return Err(null("output array"));
        }
        let tr = r.inner.transforms.get(index).ok_or_else(|| {
            Fail(MiregStatus::InvalidArgument, format!("transform {index} out of range ({})", r.inner.transforms.len()))
        })?;
        let rot = std::slice::from_raw_parts_mut(rotation, 9);
        for i in 0..3 {
            for j in 0..3 {
                rot[3 * i + j] = tr.rotation()[(i, j)];
            }
        }
        std::slice::from_raw_parts_mut(translation, 3).copy_from_slice(tr.translation().as_slice());
        Ok(())
    })
}

/// Length of the per-correspondence assignment, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mireg_result_assignment_len(result: *const MiregResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.cluster_assignment.len())
}

/// Copies the assignment (1-based transform index, 0 = unassigned) into
/// `out`, which must have exactly `len` slots.
///
/// # Safety
/// `out` must point to `len` writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn mireg_result_assignment(result: *const MiregResult, out: *mut u32, len: usize) -> MiregStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("output array"));
        }
        let a = &r.inner.cluster_assignment;
        if len != a.len() {
            return Err(Fail(MiregStatus::InvalidArgument, format!("buffer has {len} slots, need {}", a.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(a);
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mireg_result_free(result: *mut MiregResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
