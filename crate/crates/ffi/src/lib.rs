//! C ABI for `lsbo-core`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free`. Every fallible call returns an [`LsboStatus`]; on
//! failure the message is kept per thread and read with
//! [`lsbo_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lsbo_core::acquisition;
use lsbo_core::cycles::{successive_cycles, CycleSchedule};
use lsbo_core::gp::{GpFitConfig, GpHyper, GpSurrogate};
use lsbo_core::vae::{lcl, VaeModel};
use lsbo_core::LsboError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

/// A trained VAE.
pub struct LsboModel(VaeModel);

/// A fitted GP surrogate.
pub struct LsboGp(GpSurrogate);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &LsboError) -> LsboStatus {
    match e {
        LsboError::Io { .. } => LsboStatus::Io,
        LsboError::Format { .. } | LsboError::Config(_) => LsboStatus::Format,
        LsboError::NonFinite { .. } | LsboError::Cholesky { .. } | LsboError::Divergence { .. } => LsboStatus::Numerical,
        _ => LsboStatus::InvalidArgument,
    }
}

struct Fail(LsboStatus, String);

impl From<LsboError> for Fail {
    fn from(e: LsboError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LsboStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LsboStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LsboStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LsboStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const LsboModel) -> Result<&'a VaeModel, Fail> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn gp_ref<'a>(g: *const LsboGp) -> Result<&'a GpSurrogate, Fail> {
    g.as_ref().map(|g| &g.0).ok_or_else(|| null("gp"))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lsbo_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lsbo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model checkpoint written by the `lsbo` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_load(path: *const c_char, out: *mut *mut LsboModel) -> LsboStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let m = VaeModel::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(LsboModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`lsbo_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_free(model: *mut LsboModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_latent_dim(model: *const LsboModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.latent_dim())
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_input_dim(model: *const LsboModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Encoder mean of one input.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_encode(
    model: *const LsboModel,
    x: *const f64,
    x_len: usize,
    z_out: *mut f64,
    z_len: usize,
) -> LsboStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(x_len, m.input_dim(), "x")?;
        check_len(z_len, m.latent_dim(), "z_out")?;
        let z = m.encode_mean(input(x, x_len, "x")?)?;
        output(z_out, z_len, "z_out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// Decoder mean of one latent.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_decode(
    model: *const LsboModel,
    z: *const f64,
    z_len: usize,
    x_out: *mut f64,
    x_len: usize,
) -> LsboStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(z_len, m.latent_dim(), "z")?;
        check_len(x_len, m.input_dim(), "x_out")?;
        let x = m.decode(input(z, z_len, "z")?)?;
        output(x_out, x_len, "x_out")?.copy_from_slice(&x);
        Ok(())
    })
}

/// Latent consistency loss `‖z − enc(dec(z))‖²`.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_lcl(model: *const LsboModel, z: *const f64, z_len: usize, out: *mut f64) -> LsboStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(z_len, m.latent_dim(), "z")?;
        let v = lcl(m, input(z, z_len, "z")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Cycle `z` with burn-in `burn_in` over `cycles` iterations and write the
/// consistent point. `converged` may be null.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lsbo_model_consistent_point(
    model: *const LsboModel,
    z: *const f64,
    z_len: usize,
    burn_in: usize,
    cycles: usize,
    tolerance: f64,
    z_out: *mut f64,
    converged: *mut bool,
) -> LsboStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(z_len, m.latent_dim(), "z")?;
        let schedule = CycleSchedule::new(burn_in, cycles)?;
        let trace = successive_cycles(m, input(z, z_len, "z")?, schedule, tolerance)?;
        output(z_out, z_len, "z_out")?.copy_from_slice(&trace.consistent_point());
        if let Some(c) = converged.as_mut() {
            *c = trace.converged;
        }
        Ok(())
    })
}

unsafe fn training_set(z: *const f64, y: *const f64, n: usize, dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>), Fail> {
    if dim == 0 {
        return Err(invalid("dim must be at least 1"));
    }
    let flat = input(z, n * dim, "z")?;
    let ys = input(y, n, "y")?;
    Ok((flat.chunks(dim).map(<[f64]>::to_vec).collect(), ys.to_vec()))
}

/// GP with fixed hyperparameters on `n` row-major latents of width `dim`.
///
/// # Safety
/// `z` must hold `n * dim` values, `y` `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_with_hyper(
    z: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    signal_var: f64,
    lengthscale: f64,
    noise_var: f64,
    out: *mut *mut LsboGp,
) -> LsboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (zs, ys) = training_set(z, y, n, dim)?;
        let hyper = GpHyper {
            signal_var,
            lengthscale,
            noise_var,
        };
        *out = Box::into_raw(Box::new(LsboGp(GpSurrogate::with_hyper(&zs, &ys, hyper)?)));
        Ok(())
    })
}

/// GP with hyperparameters fitted by marginal likelihood.
///
/// # Safety
/// `z` must hold `n * dim` values, `y` `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_fit(
    z: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut LsboGp,
) -> LsboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (zs, ys) = training_set(z, y, n, dim)?;
        let cfg = GpFitConfig {
            seed,
            ..GpFitConfig::default()
        };
        *out = Box::into_raw(Box::new(LsboGp(GpSurrogate::fit(&zs, &ys, GpHyper::default(), &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `gp` must come from a `lsbo_gp_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_free(gp: *mut LsboGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Posterior mean and variance (noise included) at one latent.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_predict(
    gp: *const LsboGp,
    z: *const f64,
    z_len: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> LsboStatus {
    guard(|| {
        let g = gp_ref(gp)?;
        check_len(z_len, g.dim(), "z")?;
        let (m, v) = g.predict(input(z, z_len, "z")?);
        *mean.as_mut().ok_or_else(|| null("mean"))? = m;
        *variance.as_mut().ok_or_else(|| null("variance"))? = v;
        Ok(())
    })
}

/// Hyperparameters as `[signal_var, lengthscale, noise_var]`.
///
/// # Safety
/// `out` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_hyper(gp: *const LsboGp, out: *mut f64) -> LsboStatus {
    guard(|| {
        let h = gp_ref(gp)?.hyper();
        output(out, 3, "out")?.copy_from_slice(&[h.signal_var, h.lengthscale, h.noise_var]);
        Ok(())
    })
}

/// Log marginal likelihood of the (standardized) training targets.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lsbo_gp_log_marginal_likelihood(gp: *const LsboGp, out: *mut f64) -> LsboStatus {
    guard(|| {
        let v = gp_ref(gp)?.log_marginal_likelihood();
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lsbo_ucb(mean: f64, variance: f64, kappa: f64) -> f64 {
    acquisition::ucb(mean, variance, kappa)
}

#[no_mangle]
pub extern "C" fn lsbo_ei(mean: f64, variance: f64, y_best: f64, xi: f64) -> f64 {
    acquisition::ei(mean, variance, y_best, xi)
}
