//! C ABI for the cinla inference engine.
//!
//! Conventions:
//! - Opaque handles: callers see pointers, never struct layouts.
//! - Every fallible function returns a [`CinlaStatus`] code; results come
//!   back through out-parameters.
//! - Handles are freed with the matching `*_free` function; `NULL` is always
//!   safe to free.
//! - `cinla_last_error` returns a thread-local message for the most recent
//!   failure on the calling thread.

use cinla::correction::{CorrectionConfig, CorrectionMode};
use cinla::experiments::report::{generic_report_params, stat_from_fit};
use cinla::mcmc::{run_mcmc, summarize, ChainConfig, ParamSummary, PosteriorSamples};
use cinla::model::ModelConfig;
use cinla::posterior::{explore, hyper_marginal, HyperPosterior};
use cinla::ModelSpec;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl AsRef<str>) {
    let sanitized = msg.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CinlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    FitFailed = 4,
    NotFound = 5,
}

/// Correction variants selectable over the ABI.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CinlaCorrection {
    None = 0,
    MeanOnly = 1,
    MeanAndSkew = 2,
}

impl From<CinlaCorrection> for CorrectionMode {
    fn from(value: CinlaCorrection) -> Self {
        match value {
            CinlaCorrection::None => CorrectionMode::None,
            CinlaCorrection::MeanOnly => CorrectionMode::MeanOnly,
            CinlaCorrection::MeanAndSkew => CorrectionMode::MeanAndSkew,
        }
    }
}

/// Posterior summary of one parameter, mirrored across the ABI.
#[repr(C)]
pub struct CinlaSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Opaque model handle.
pub struct CinlaModel {
    spec: ModelSpec,
}

/// Opaque fit handle holding the explored hyperparameter posterior.
pub struct CinlaFit {
    spec: ModelSpec,
    hp: HyperPosterior,
}

/// Opaque handle over MCMC output.
pub struct CinlaSamples {
    samples: PosteriorSamples,
    summaries: Vec<ParamSummary>,
}

/// Last error message for the calling thread; valid until the next failing
/// call on the same thread. Never `NULL`.
#[no_mangle]
pub extern "C" fn cinla_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn cinla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a model configuration (JSON, same schema as the CLI) into a model
/// handle.
///
/// # Safety
/// `json` must be a NUL-terminated C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cinla_model_from_json(
    json: *const c_char,
    out: *mut *mut CinlaModel,
) -> CinlaStatus {
    if json.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("model json is not valid UTF-8");
            return CinlaStatus::InvalidUtf8;
        }
    };
    match ModelConfig::from_json(text).and_then(|c| c.build()) {
        Ok(spec) => {
            *out = Box::into_raw(Box::new(CinlaModel { spec }));
            CinlaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CinlaStatus::InvalidArgument
        }
    }
}

/// Number of latent variables.
///
/// # Safety
/// `model` must be a live handle from [`cinla_model_from_json`].
#[no_mangle]
pub unsafe extern "C" fn cinla_model_n_latent(model: *const CinlaModel, out: *mut usize) -> CinlaStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model");
        return CinlaStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return CinlaStatus::NullPointer;
    }
    *out = model.spec.n_latent();
    CinlaStatus::Ok
}

/// Number of hyperparameters.
///
/// # Safety
/// `model` must be a live handle from [`cinla_model_from_json`].
#[no_mangle]
pub unsafe extern "C" fn cinla_model_n_hyper(model: *const CinlaModel, out: *mut usize) -> CinlaStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model");
        return CinlaStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null out pointer");
        return CinlaStatus::NullPointer;
    }
    *out = model.spec.n_hyper();
    CinlaStatus::Ok
}

/// # Safety
/// `model` must come from [`cinla_model_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cinla_model_free(model: *mut CinlaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the Laplace pipeline with the requested correction.
///
/// # Safety
/// `model` must be live, `y` must point to `n_y` doubles, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cinla_fit(
    model: *const CinlaModel,
    y: *const f64,
    n_y: usize,
    correction: CinlaCorrection,
    xi: f64,
    out: *mut *mut CinlaFit,
) -> CinlaStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model");
        return CinlaStatus::NullPointer;
    };
    if y.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let y = std::slice::from_raw_parts(y, n_y);
    let cfg = match CorrectionConfig::new(correction.into(), xi) {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return CinlaStatus::InvalidArgument;
        }
    };
    match explore(&model.spec, y, &cfg) {
        Ok(hp) => {
            *out = Box::into_raw(Box::new(CinlaFit {
                spec: model.spec.clone(),
                hp,
            }));
            CinlaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CinlaStatus::FitFailed
        }
    }
}

/// Posterior summary of a named parameter (`beta_0`, `theta_0`, `sigma2_0`,
/// `sigma_0`, ...).
///
/// # Safety
/// `fit` must be live, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cinla_fit_summary(
    fit: *const CinlaFit,
    name: *const c_char,
    out: *mut CinlaSummary,
) -> CinlaStatus {
    let Some(fit) = fit.as_ref() else {
        set_error("null fit");
        return CinlaStatus::NullPointer;
    };
    if name.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    let Ok(name) = CStr::from_ptr(name).to_str() else {
        set_error("parameter name is not valid UTF-8");
        return CinlaStatus::InvalidUtf8;
    };
    let params = generic_report_params(&fit.spec);
    let Some(param) = params.iter().find(|p| p.name == name) else {
        set_error(format!("no parameter named {name}"));
        return CinlaStatus::NotFound;
    };
    match stat_from_fit(&fit.spec, &fit.hp, param) {
        Ok(stat) => {
            *out = CinlaSummary {
                mean: stat.mean,
                sd: stat.sd,
                q025: stat.q025,
                q50: stat.q50,
                q975: stat.q975,
            };
            CinlaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CinlaStatus::FitFailed
        }
    }
}

/// Copies the marginal density of hyperparameter `axis` into caller-owned
/// buffers of capacity `cap`; `written` receives the point count. Call with
/// `cap = 0` to query the required size.
///
/// # Safety
/// `fit` must be live; `xs`/`ys` must hold `cap` doubles when `cap > 0`.
#[no_mangle]
pub unsafe extern "C" fn cinla_fit_hyper_marginal(
    fit: *const CinlaFit,
    axis: usize,
    xs: *mut f64,
    ys: *mut f64,
    cap: usize,
    written: *mut usize,
) -> CinlaStatus {
    let Some(fit) = fit.as_ref() else {
        set_error("null fit");
        return CinlaStatus::NullPointer;
    };
    if written.is_null() {
        set_error("null out pointer");
        return CinlaStatus::NullPointer;
    }
    let marg = match hyper_marginal(&fit.hp, axis) {
        Ok(m) => m,
        Err(e) => {
            set_error(e.to_string());
            return CinlaStatus::InvalidArgument;
        }
    };
    *written = marg.grid.len();
    if cap == 0 {
        return CinlaStatus::Ok;
    }
    if xs.is_null() || ys.is_null() {
        set_error("null buffer");
        return CinlaStatus::NullPointer;
    }
    if cap < marg.grid.len() {
        set_error(format!("buffer of {cap} too small for {} points", marg.grid.len()));
        return CinlaStatus::InvalidArgument;
    }
    std::slice::from_raw_parts_mut(xs, marg.grid.len()).copy_from_slice(&marg.grid);
    std::slice::from_raw_parts_mut(ys, marg.density.len()).copy_from_slice(&marg.density);
    CinlaStatus::Ok
}

/// # Safety
/// `fit` must come from [`cinla_fit`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cinla_fit_free(fit: *mut CinlaFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Runs the MCMC oracle.
///
/// # Safety
/// `model` must be live, `y` must point to `n_y` doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cinla_mcmc(
    model: *const CinlaModel,
    y: *const f64,
    n_y: usize,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    n_chains: usize,
    seed: u64,
    out: *mut *mut CinlaSamples,
) -> CinlaStatus {
    let Some(model) = model.as_ref() else {
        set_error("null model");
        return CinlaStatus::NullPointer;
    };
    if y.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let y = std::slice::from_raw_parts(y, n_y);
    let cfg = ChainConfig {
        n_iter,
        burn_in,
        thin,
        n_chains,
        seed,
        adapt_window: 50,
    };
    match run_mcmc(&model.spec, y, &cfg) {
        Ok(samples) => {
            let summaries = summarize(&samples);
            *out = Box::into_raw(Box::new(CinlaSamples { samples, summaries }));
            CinlaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CinlaStatus::FitFailed
        }
    }
}

/// Posterior summary of a named parameter from the MCMC run.
///
/// # Safety
/// `samples` must be live, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cinla_samples_summary(
    samples: *const CinlaSamples,
    name: *const c_char,
    out: *mut CinlaSummary,
) -> CinlaStatus {
    let Some(samples) = samples.as_ref() else {
        set_error("null samples");
        return CinlaStatus::NullPointer;
    };
    if name.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    let Ok(name) = CStr::from_ptr(name).to_str() else {
        set_error("parameter name is not valid UTF-8");
        return CinlaStatus::InvalidUtf8;
    };
    let Some(s) = samples.summaries.iter().find(|s| s.name == name) else {
        set_error(format!("no parameter named {name}"));
        return CinlaStatus::NotFound;
    };
    *out = CinlaSummary {
        mean: s.mean,
        sd: s.sd,
        q025: s.q025,
        q50: s.q50,
        q975: s.q975,
    };
    CinlaStatus::Ok
}

/// Number of stored draws for a named parameter (pooled across chains).
///
/// # Safety
/// `samples` must be live, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cinla_samples_len(
    samples: *const CinlaSamples,
    name: *const c_char,
    out: *mut usize,
) -> CinlaStatus {
    let Some(samples) = samples.as_ref() else {
        set_error("null samples");
        return CinlaStatus::NullPointer;
    };
    if name.is_null() || out.is_null() {
        set_error("null pointer");
        return CinlaStatus::NullPointer;
    }
    let Ok(name) = CStr::from_ptr(name).to_str() else {
        set_error("parameter name is not valid UTF-8");
        return CinlaStatus::InvalidUtf8;
    };
    match samples.samples.trace(name) {
        Some(t) => {
            *out = t.chains.iter().map(Vec::len).sum();
            CinlaStatus::Ok
        }
        None => {
            set_error(format!("no parameter named {name}"));
            CinlaStatus::NotFound
        }
    }
}

/// # Safety
/// `samples` must come from [`cinla_mcmc`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cinla_samples_free(samples: *mut CinlaSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    const MODEL_JSON: &str = r#"{
        "blocks": [
            {"kind": "fixed_effects", "count": 1},
            {"kind": "iid_normal", "clusters": 20, "precision_hyper": 0}
        ],
        "fixed_priors": [{"mean": 0.0, "variance": 1.0}],
        "design": [
            [0,0,1.0],[0,1,1.0],[1,0,1.0],[1,2,1.0],[2,0,1.0],[2,3,1.0],[3,0,1.0],[3,4,1.0],
            [4,0,1.0],[4,5,1.0],[5,0,1.0],[5,6,1.0],[6,0,1.0],[6,7,1.0],[7,0,1.0],[7,8,1.0],
            [8,0,1.0],[8,9,1.0],[9,0,1.0],[9,10,1.0],[10,0,1.0],[10,11,1.0],[11,0,1.0],[11,12,1.0],
            [12,0,1.0],[12,13,1.0],[13,0,1.0],[13,14,1.0],[14,0,1.0],[14,15,1.0],[15,0,1.0],[15,16,1.0],
            [16,0,1.0],[16,17,1.0],[17,0,1.0],[17,18,1.0],[18,0,1.0],[18,19,1.0],[19,0,1.0],[19,20,1.0]
        ],
        "n_obs": 20,
        "family": {"kind": "bernoulli_logit"},
        "hyper_priors": [{"kind": "gamma_on_precision", "shape": 1.0, "rate": 1.0}]
    }"#;

    #[test]
    fn full_round_trip_through_the_abi() {
        unsafe {
            let json = CString::new(MODEL_JSON).unwrap();
            let mut model: *mut CinlaModel = ptr::null_mut();
            assert!(cinla_model_from_json(json.as_ptr(), &mut model) == CinlaStatus::Ok);
            let mut n = 0usize;
            assert!(cinla_model_n_latent(model, &mut n) == CinlaStatus::Ok);
            assert_eq!(n, 21);
            assert!(cinla_model_n_hyper(model, &mut n) == CinlaStatus::Ok);
            assert_eq!(n, 1);

            let y: Vec<f64> = (0..20).map(|j| if j % 3 == 0 { 0.0 } else { 1.0 }).collect();
            let mut fit: *mut CinlaFit = ptr::null_mut();
            assert!(
                cinla_fit(model, y.as_ptr(), y.len(), CinlaCorrection::MeanOnly, 10.0, &mut fit)
                    == CinlaStatus::Ok
            );

            let name = CString::new("beta_0").unwrap();
            let mut summary = CinlaSummary {
                mean: 0.0,
                sd: 0.0,
                q025: 0.0,
                q50: 0.0,
                q975: 0.0,
            };
            assert!(cinla_fit_summary(fit, name.as_ptr(), &mut summary) == CinlaStatus::Ok);
            assert!(summary.sd > 0.0);
            assert!(summary.q025 < summary.q50 && summary.q50 < summary.q975);

            // Marginal export with size query.
            let mut needed = 0usize;
            assert!(
                cinla_fit_hyper_marginal(fit, 0, ptr::null_mut(), ptr::null_mut(), 0, &mut needed)
                    == CinlaStatus::Ok
            );
            assert!(needed > 10);
            let mut xs = vec![0.0; needed];
            let mut ys = vec![0.0; needed];
            let mut written = 0usize;
            assert!(
                cinla_fit_hyper_marginal(fit, 0, xs.as_mut_ptr(), ys.as_mut_ptr(), needed, &mut written)
                    == CinlaStatus::Ok
            );
            assert_eq!(written, needed);
            assert!(ys.iter().all(|&d| d >= 0.0));

            // MCMC through the ABI.
            let mut samples: *mut CinlaSamples = ptr::null_mut();
            assert!(
                cinla_mcmc(model, y.as_ptr(), y.len(), 2_000, 500, 2, 1, 9, &mut samples)
                    == CinlaStatus::Ok
            );
            let mut mc = CinlaSummary {
                mean: 0.0,
                sd: 0.0,
                q025: 0.0,
                q50: 0.0,
                q975: 0.0,
            };
            assert!(cinla_samples_summary(samples, name.as_ptr(), &mut mc) == CinlaStatus::Ok);
            assert!(mc.sd > 0.0);
            let mut len = 0usize;
            assert!(cinla_samples_len(samples, name.as_ptr(), &mut len) == CinlaStatus::Ok);
            assert_eq!(len, 1_000);

            cinla_samples_free(samples);
            cinla_fit_free(fit);
            cinla_model_free(model);
        }
    }

    #[test]
    fn error_paths_set_messages() {
        unsafe {
            let mut model: *mut CinlaModel = ptr::null_mut();
            let bad = CString::new("{not json").unwrap();
            assert!(cinla_model_from_json(bad.as_ptr(), &mut model) == CinlaStatus::InvalidArgument);
            assert!(model.is_null());
            let msg = CStr::from_ptr(cinla_last_error()).to_str().unwrap();
            assert!(msg.contains("config"), "{msg}");

            assert!(cinla_model_from_json(ptr::null(), &mut model) == CinlaStatus::NullPointer);

            let json = CString::new(MODEL_JSON).unwrap();
            assert!(cinla_model_from_json(json.as_ptr(), &mut model) == CinlaStatus::Ok);
            let y = vec![1.0; 20];
            let mut fit: *mut CinlaFit = ptr::null_mut();
            // Negative xi rejected.
            assert!(
                cinla_fit(model, y.as_ptr(), y.len(), CinlaCorrection::MeanOnly, -1.0, &mut fit)
                    == CinlaStatus::InvalidArgument
            );
            // Wrong observation count.
            assert!(
                cinla_fit(model, y.as_ptr(), 3, CinlaCorrection::None, 10.0, &mut fit)
                    == CinlaStatus::FitFailed
            );
            // Unknown parameter name.
            assert!(
                cinla_fit(model, y.as_ptr(), y.len(), CinlaCorrection::None, 10.0, &mut fit)
                    == CinlaStatus::Ok
            );
            let name = CString::new("nope").unwrap();
            let mut summary = CinlaSummary {
                mean: 0.0,
                sd: 0.0,
                q025: 0.0,
                q50: 0.0,
                q975: 0.0,
            };
            assert!(cinla_fit_summary(fit, name.as_ptr(), &mut summary) == CinlaStatus::NotFound);
            cinla_fit_free(fit);
            cinla_model_free(model);
            // Freeing NULL is a no-op.
            cinla_model_free(ptr::null_mut());
            cinla_fit_free(ptr::null_mut());
            cinla_samples_free(ptr::null_mut());
        }
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(cinla_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
