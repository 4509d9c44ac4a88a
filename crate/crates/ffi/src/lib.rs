//! C ABI for `fimlab`.
//!
//! Models and experiment results cross the boundary as opaque handles that the
//! caller releases with the matching `*_free` function. Every fallible call
//! returns a [`FimStatus`]; on failure the message is available from
//! [`fimlab_last_error`] until the next failing call on the same thread.
//! Matrices are dense, row-major, `p·p` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fimlab::experiment::{self, ExperimentConfig, Format, ResultTable};
use fimlab::fisher::observed_fim;
use fimlab::mcfim::relative_error;
use fimlab::mle::fit_mle;
use fimlab::models::{DataSet, ExpFamilyModel, LinearStateSpaceModel, MixtureGaussianModel, Model, SignalPlusNoiseModel};
use fimlab::spsa::{theorem_a1_lhs, OneStepInputs};
use fimlab::{FimError, RngStream, SymMat, Vector};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    NonFinite = 5,
    SolverFailed = 6,
    Unsupported = 7,
    ConfigError = 8,
    StudyFailed = 9,
    Io = 10,
    Panic = 11,
}

/// Output format for [`fimlab_result_render`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FimFormat {
    Csv = 0,
    Markdown = 1,
    Json = 2,
}

/// Opaque model handle.
pub struct FimModel {
    inner: Box<dyn Model>,
}

/// Opaque experiment result handle.
pub struct FimResult {
    table: ResultTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FimError) -> FimStatus {
    match e {
        FimError::DimensionMismatch { .. } => FimStatus::DimensionMismatch,
        FimError::NotPositiveDefinite(_) | FimError::SingularHessian => FimStatus::NotPositiveDefinite,
        FimError::NonFiniteEvaluation(_) | FimError::DegenerateMixture { .. } | FimError::SingularInnovation { .. } => FimStatus::NonFinite,
        FimError::NotConverged { .. } => FimStatus::SolverFailed,
        FimError::NotIndependentData => FimStatus::Unsupported,
        FimError::UnknownExperiment(_) | FimError::InvalidOverride { .. } | FimError::Config(_) => FimStatus::ConfigError,
        FimError::TooManyFailures { .. } => FimStatus::StudyFailed,
        FimError::Io(_) => FimStatus::Io,
        _ => FimStatus::InvalidInput,
    }
}

/// Failure inside an exported call.
enum CallError {
    Fim(FimError),
    Null(&'static str),
    Unsupported(String),
}

impl From<FimError> for CallError {
    fn from(e: FimError) -> Self {
        CallError::Fim(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), CallError>>(f: F) -> FimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FimStatus::Ok,
        Ok(Err(e)) => match e {
            CallError::Fim(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
            CallError::Null(what) => {
                set_error(format!("null pointer: {what}"));
                FimStatus::NullPointer
            }
            CallError::Unsupported(msg) => {
                set_error(msg);
                FimStatus::Unsupported
            }
        },
        Err(_) => {
            set_error("internal panic".into());
            FimStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], CallError> {
    if ptr.is_null() {
        return Err(CallError::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], CallError> {
    if ptr.is_null() {
        return Err(CallError::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn model_ref<'a>(model: *const FimModel) -> Result<&'a dyn Model, CallError> {
    model.as_ref().map(|m| m.inner.as_ref()).ok_or_else(|| CallError::Null("model"))
}

fn write_matrix(m: &SymMat, out: &mut [f64]) {
    let p = m.dim();
    for r in 0..p {
        for s in 0..p {
            out[r * p + s] = m.get(r, s);
        }
    }
}

fn read_matrix(p: usize, values: &[f64]) -> Result<SymMat, FimError> {
    SymMat::from_row_slice(p, values)
}

unsafe fn theta_from(model: &dyn Model, theta: *const f64) -> Result<Vector, CallError> {
    Ok(Vector::from_column_slice(slice(theta, model.dim(), "theta")?))
}

unsafe fn data_from(model: &dyn Model, data: *const f64, n: usize) -> Result<DataSet, CallError> {
    let q = model.obs_dim();
    Ok(DataSet::new(q, slice(data, n * q, "data")?.to_vec())?)
}

fn boxed(model: impl Model + 'static, out: *mut *mut FimModel) -> Result<(), CallError> {
    if out.is_null() {
        return Err(CallError::Null("out"));
    }
    let handle = Box::new(FimModel { inner: Box::new(model) });
    // SAFETY: `out` was checked for null and points to caller-owned storage.
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Message of the last failure on this thread, or NULL. Owned by the library;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fimlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Two-component mixture with known scales, `θ = [λ, μ1, μ2]`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_mixture_known(sigma1: f64, sigma2: f64, out: *mut *mut FimModel) -> FimStatus {
    guard(|| boxed(MixtureGaussianModel::known_scales(sigma1, sigma2)?, out))
}

/// Two-component mixture with free scales, `θ = [λ, μ1, σ1, μ2, σ2]`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_mixture_free(out: *mut *mut FimModel) -> FimStatus {
    guard(|| boxed(MixtureGaussianModel::free_scales(), out))
}

/// Signal-plus-noise model with diagonal signal covariance and noise
/// `√i·UᵀU`; `utu` is a row-major `q·q` positive semidefinite matrix.
///
/// # Safety
/// `utu` must point to `q·q` doubles and `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_spn(utu: *const f64, q: usize, out: *mut *mut FimModel) -> FimStatus {
    guard(|| {
        let m = read_matrix(q, slice(utu, q * q, "utu")?)?;
        boxed(SignalPlusNoiseModel::new(m)?, out)
    })
}

/// The built-in three-state linear state-space model, `θ = Q` diagonal.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_statespace_default(out: *mut *mut FimModel) -> FimStatus {
    guard(|| boxed(LinearStateSpaceModel::three_state_default(), out))
}

/// Poisson with mean `θ`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_poisson(out: *mut *mut FimModel) -> FimStatus {
    guard(|| boxed(ExpFamilyModel::poisson(), out))
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from a `fimlab_model_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_free(model: *mut FimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parameter dimension `p`, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_dim(model: *const FimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Observation dimension `q`, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fimlab_model_obs_dim(model: *const FimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.obs_dim())
}

/// Draws `n` observations at `θ` into `out` (`n·q` doubles).
///
/// # Safety
/// `theta` must hold `p` doubles and `out` must have room for `n·q`.
#[no_mangle]
pub unsafe extern "C" fn fimlab_sample(model: *const FimModel, theta: *const f64, n: usize, seed: u64, out: *mut f64) -> FimStatus {
    guard(|| {
        let m = model_ref(model)?;
        let th = theta_from(m, theta)?;
        let data = m.sample(&th, n, &mut RngStream::new(seed, 0))?;
        slice_mut(out, n * m.obs_dim(), "out")?.copy_from_slice(data.values());
        Ok(())
    })
}

/// Negative log-likelihood of `n` observations.
///
/// # Safety
/// `theta` must hold `p` doubles, `data` `n·q` doubles, `out` one double.
#[no_mangle]
pub unsafe extern "C" fn fimlab_neg_log_lik(model: *const FimModel, theta: *const f64, data: *const f64, n: usize, out: *mut f64) -> FimStatus {
    guard(|| {
        let m = model_ref(model)?;
        let value = m.neg_log_lik(&theta_from(m, theta)?, &data_from(m, data, n)?)?;
        slice_mut(out, 1, "out")?[0] = value;
        Ok(())
    })
}

/// Observed information per observation `H̄_n(θ)` into `out` (`p·p`).
///
/// # Safety
/// `theta` must hold `p` doubles, `data` `n·q` doubles, `out` `p·p` doubles.
#[no_mangle]
pub unsafe extern "C" fn fimlab_observed_fim(model: *const FimModel, theta: *const f64, data: *const f64, n: usize, out: *mut f64) -> FimStatus {
    guard(|| {
        let m = model_ref(model)?;
        let h = observed_fim(m, &data_from(m, data, n)?, &theta_from(m, theta)?)?;
        write_matrix(&h, slice_mut(out, m.dim() * m.dim(), "out")?);
        Ok(())
    })
}

/// Closed-form or quadrature `F_n(θ)` into `out` (`p·p`). Returns
/// `FIM_STATUS_UNSUPPORTED` for models that only have a Monte Carlo path.
///
/// # Safety
/// `theta` must hold `p` doubles and `out` `p·p` doubles.
#[no_mangle]
pub unsafe extern "C" fn fimlab_expected_fim(model: *const FimModel, theta: *const f64, n: usize, out: *mut f64) -> FimStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (f, _) = m
            .expected_fim(&theta_from(m, theta)?, n)?
            .ok_or_else(|| CallError::Unsupported(format!("{} has no closed-form information", m.name())))?;
        write_matrix(&f, slice_mut(out, m.dim() * m.dim(), "out")?);
        Ok(())
    })
}

/// Maximum likelihood estimate into `out_theta` (`p`). `seed` drives the
/// stochastic solver where the model uses one.
///
/// # Safety
/// `data` must hold `n·q` doubles and `out_theta` `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn fimlab_fit_mle(model: *const FimModel, data: *const f64, n: usize, seed: u64, out_theta: *mut f64) -> FimStatus {
    guard(|| {
        let m = model_ref(model)?;
        let fit = fit_mle(m, &data_from(m, data, n)?, &mut RngStream::new(seed, 0))?;
        slice_mut(out_theta, m.dim(), "out_theta")?.copy_from_slice(fit.theta.as_slice());
        Ok(())
    })
}

/// `‖est − ref‖ / ‖ref‖` in the spectral norm for `p·p` row-major matrices.
///
/// # Safety
/// `est` and `reference` must hold `p·p` doubles, `out` one double.
#[no_mangle]
pub unsafe extern "C" fn fimlab_relative_error(est: *const f64, reference: *const f64, p: usize, out: *mut f64) -> FimStatus {
    guard(|| {
        let e = read_matrix(p, slice(est, p * p, "est")?)?;
        let r = read_matrix(p, slice(reference, p * p, "reference")?)?;
        slice_mut(out, 1, "out")?[0] = relative_error(&e, &r)?;
        Ok(())
    })
}

/// Inputs of the one-iteration SPSA comparison for `p` parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FimOneStep {
    /// Gradient at `θ0`, `p` doubles.
    pub grad: *const f64,
    pub theta0: *const f64,
    pub theta_star: *const f64,
    pub p: usize,
    pub sigma2: f64,
    pub a0_s: f64,
    pub a0_b: f64,
    pub c0_s: f64,
    pub c0_b: f64,
}

/// Left side of the one-iteration superiority condition; negative means the
/// segmented uniform perturbation gives the smaller MSE.
///
/// # Safety
/// The pointers in `inputs` must each hold `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn fimlab_spsa_one_step_lhs(inputs: *const FimOneStep, out: *mut f64) -> FimStatus {
    guard(|| {
        let x = inputs.as_ref().ok_or_else(|| CallError::Null("inputs"))?;
        let vec = |p: *const f64, what: &'static str| -> Result<Vector, CallError> { Ok(Vector::from_column_slice(slice(p, x.p, what)?)) };
        let v = OneStepInputs {
            grad: vec(x.grad, "grad")?,
            theta0: vec(x.theta0, "theta0")?,
            theta_star: vec(x.theta_star, "theta_star")?,
            sigma2: x.sigma2,
            a0_s: x.a0_s,
            a0_b: x.a0_b,
            c0_s: x.c0_s,
            c0_b: x.c0_b,
        };
        slice_mut(out, 1, "out")?[0] = theorem_a1_lhs(&v);
        Ok(())
    })
}

/// Runs an experiment from a JSON config (the CLI format) on `threads` workers.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_experiment_run(config_json: *const c_char, threads: usize, out: *mut *mut FimResult) -> FimStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(CallError::Null("config_json"));
        }
        if out.is_null() {
            return Err(CallError::Null("out"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|e| FimError::Config(format!("config is not UTF-8: {e}")))?;
        let cfg = ExperimentConfig::from_json(text)?;
        let table = experiment::run_with_threads(&cfg, threads)?;
        *out = Box::into_raw(Box::new(FimResult { table }));
        Ok(())
    })
}

/// Renders a result as a newly allocated string; release it with [`fimlab_string_free`].
///
/// # Safety
/// `result` must be a live handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn fimlab_result_render(result: *const FimResult, format: FimFormat, out: *mut *mut c_char) -> FimStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| CallError::Null("result"))?;
        if out.is_null() {
            return Err(CallError::Null("out"));
        }
        let f = match format {
            FimFormat::Csv => Format::Csv,
            FimFormat::Markdown => Format::Markdown,
            FimFormat::Json => Format::Json,
        };
        let s = CString::new(r.table.render(f)).map_err(|e| FimError::Io(e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Number of data rows in a result, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fimlab_result_rows(result: *const FimResult) -> usize {
    result.as_ref().map_or(0, |r| r.table.rows.len())
}

/// Releases a result. NULL is ignored.
///
/// # Safety
/// `result` must come from [`fimlab_experiment_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fimlab_result_free(result: *mut FimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fimlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
