//! C ABI over the imago agent.
//!
//! Models are opaque handles created by [`imago_model_load`] and released by
//! [`imago_model_free`]. Every fallible call returns an [`ImagoStatus`]; the
//! message of the most recent failure on the calling thread is available from
//! [`imago_last_error`]. Output arrays are caller-allocated and sized with the
//! `imago_model_*` dimension queries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use imago::agent::{episode_rollout, imagine, Model, Policy, Scene};
use imago::diff::Tensor;
use imago::harness::{load_checkpoint, model_from_checkpoint};
use imago::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Runtime = 6,
    Panic = 7,
}

/// Glimpse selection rule for [`imago_rollout`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagoPolicy {
    Uncertainty = 0,
    Random = 1,
}

/// Opaque model handle.
pub struct ImagoModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn classify(e: &Error) -> ImagoStatus {
    match e {
        Error::Io { .. } => ImagoStatus::Io,
        Error::Format(_) | Error::Length { .. } | Error::Version { .. } | Error::UnknownParameter(_) | Error::Config(_) => {
            ImagoStatus::Format
        }
        Error::Contract(_) | Error::Shape { .. } => ImagoStatus::InvalidArgument,
        _ => ImagoStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ImagoStatus, String)>) -> ImagoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImagoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ImagoStatus::Panic
        }
    }
}

fn lift<T>(r: imago::Result<T>) -> Result<T, (ImagoStatus, String)> {
    r.map_err(|e| (classify(&e), e.to_string()))
}

fn null(what: &str) -> (ImagoStatus, String) {
    (ImagoStatus::NullPointer, format!("{what} is null"))
}

fn too_small(what: &str, need: usize, got: usize) -> (ImagoStatus, String) {
    (ImagoStatus::BufferTooSmall, format!("{what} holds {got} values, {need} needed"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn imago_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint written by `imago train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imago_model_load(path: *const c_char, out: *mut *mut ImagoModel) -> ImagoStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (ImagoStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let (_, model) = lift(load_checkpoint(path).and_then(|c| model_from_checkpoint(&c)))?;
        *out = Box::into_raw(Box::new(ImagoModel { model }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`imago_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn imago_model_free(model: *mut ImagoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model dimensions; any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn imago_model_dims(
    model: *const ImagoModel,
    height: *mut usize,
    width: *mut usize,
    glimpse: *mut usize,
    latent_dim: *mut usize,
    feature_dim: *mut usize,
) -> ImagoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model.config;
        for (p, v) in [
            (height, m.height),
            (width, m.width),
            (glimpse, m.glimpse),
            (latent_dim, m.latent_dim),
            (feature_dim, m.feature_dim),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Imagine `n` scenes from recurrent features `h` (`feature_dim` values).
/// Writes `n·H·W` Bernoulli means to `samples` and `H·W` values each to
/// `mean` and `variance`; `mean` and `variance` may be null.
///
/// # Safety
/// Pointers must reference arrays of at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn imago_imagine(
    model: *const ImagoModel,
    h: *const f64,
    h_len: usize,
    n: usize,
    seed: u64,
    samples: *mut f64,
    samples_len: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> ImagoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if h.is_null() {
            return Err(null("h"));
        }
        if samples.is_null() {
            return Err(null("samples"));
        }
        let p = m.config.pixels();
        if samples_len < n * p {
            return Err(too_small("samples", n * p, samples_len));
        }
        let hv = Tensor::vector(std::slice::from_raw_parts(h, h_len).to_vec());
        let set = lift(imagine(m, &hv, n, seed))?;
        std::slice::from_raw_parts_mut(samples, n * p).copy_from_slice(set.samples.data());
        if !mean.is_null() {
            std::slice::from_raw_parts_mut(mean, p).copy_from_slice(set.mean.data());
        }
        if !variance.is_null() {
            std::slice::from_raw_parts_mut(variance, p).copy_from_slice(set.variance.data());
        }
        Ok(())
    })
}

/// Run a `timesteps`-step episode on `scene` (`H·W` values in `[0, 1]`).
/// Per step, writes the mean scene and variance map (`timesteps·H·W` values
/// each) and the fixation center as `(row, col)` pairs (`2·timesteps` values).
/// Any output pointer may be null.
///
/// # Safety
/// Pointers must reference arrays of at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn imago_rollout(
    model: *const ImagoModel,
    scene: *const f64,
    scene_len: usize,
    timesteps: usize,
    policy: ImagoPolicy,
    samples: usize,
    seed: u64,
    means: *mut f64,
    variances: *mut f64,
    fixations: *mut usize,
) -> ImagoStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if scene.is_null() {
            return Err(null("scene"));
        }
        let (hh, ww) = (m.config.height, m.config.width);
        if scene_len != hh * ww {
            return Err((
                ImagoStatus::InvalidArgument,
                format!("scene has {scene_len} values, model expects {}", hh * ww),
            ));
        }
        let pixels = std::slice::from_raw_parts(scene, scene_len).to_vec();
        let scene = lift(Scene::new(hh, ww, pixels, None))?;
        let policy = match policy {
            ImagoPolicy::Uncertainty => Policy::Uncertainty,
            ImagoPolicy::Random => Policy::Random,
        };
        let steps = lift(episode_rollout(m, &scene, timesteps, policy, samples, seed))?;
        let p = hh * ww;
        for (t, s) in steps.iter().enumerate() {
            if !means.is_null() {
                std::slice::from_raw_parts_mut(means.add(t * p), p).copy_from_slice(s.hypotheses.mean.data());
            }
            if !variances.is_null() {
                std::slice::from_raw_parts_mut(variances.add(t * p), p).copy_from_slice(s.hypotheses.variance.data());
            }
            if !fixations.is_null() {
                let l = s.state.history.last().expect("one percept per step").location;
                *fixations.add(2 * t) = l.row;
                *fixations.add(2 * t + 1) = l.col;
            }
        }
        Ok(())
    })
}
