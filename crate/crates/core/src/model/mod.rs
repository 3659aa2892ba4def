//! Latent Gaussian model specification.
//!
//! A model is a list of latent blocks (fixed effects, iid Gaussian effects,
//! correlated bivariate effects, AR1 processes), a sparse design map sending
//! the latent vector to per-observation linear predictors, a likelihood
//! family, and priors for the internal-scale hyperparameters.

mod config;
mod likelihood;
mod precision;
mod prior;
mod simulate;

pub use config::{load_observations_csv, load_toenail_csv, ModelConfig, ToenailRecord};
pub use likelihood::LoglikTerms;
pub use precision::{build_prior_precision, PriorPrecision};
pub use prior::log_prior_hyper;
pub use simulate::{simulate_dataset, SimulatedData, SimulationTruth};

#[allow(unused_imports)]
pub(crate) use precision::{bivariate_precision, block_log_density, prior_delta};
pub(crate) use prior::log_prior_group;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyperparameters on the internal scale (log precisions, correlation
/// transforms `log((1+rho)/(1-rho))`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams(Vec<f64>);

impl HyperParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidHyper(format!("non-finite entry {v}")));
        }
        Ok(Self(values))
    }

    /// Zero vector of the given dimension.
    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    /// For hot loops that maintain finiteness themselves.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Maps the internal correlation transform `t = log((1+rho)/(1-rho))` back to
/// `rho = tanh(t/2)`, always inside (-1, 1) for finite input.
pub fn correlation_from_internal(t: f64) -> f64 {
    let rho = (0.5 * t).tanh();
    debug_assert!(rho.abs() < 1.0);
    rho
}

/// Inverse of [`correlation_from_internal`].
pub fn internal_from_correlation(rho: f64) -> f64 {
    assert!(rho.abs() < 1.0, "|rho| must be < 1, got {rho}");
    ((1.0 + rho) / (1.0 - rho)).ln()
}

/// Structure of one contiguous block of the latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentBlockKind {
    /// Independent Gaussian coefficients with fixed priors.
    FixedEffects { count: usize },
    /// Iid `N(0, exp(-theta_k))` effects; one latent entry per cluster.
    IidNormal {
        clusters: usize,
        precision_hyper: usize,
    },
    /// Iid bivariate Gaussian pairs `(b0_i, b1_i)` stored interleaved, with a
    /// 2x2 precision parameterized by three internal hyperparameters
    /// `(log sigma0^-2, log sigma1^-2, log((1+rho)/(1-rho)))`.
    BivariateIid {
        clusters: usize,
        hyper_indices: [usize; 3],
    },
    /// Stationary AR1 process with marginal precision `kappa = exp(theta_a)`
    /// and lag-one correlation from the internal transform at `theta_b`.
    Ar1 {
        length: usize,
        log_precision_hyper: usize,
        correlation_hyper: usize,
    },
}

impl LatentBlockKind {
    pub fn len(&self) -> usize {
        match *self {
            LatentBlockKind::FixedEffects { count } => count,
            LatentBlockKind::IidNormal { clusters, .. } => clusters,
            LatentBlockKind::BivariateIid { clusters, .. } => 2 * clusters,
            LatentBlockKind::Ar1 { length, .. } => length,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A latent block placed at its offset within the latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    kind: LatentBlockKind,
    offset: usize,
}

impl LatentBlock {
    pub fn kind(&self) -> &LatentBlockKind {
        &self.kind
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.kind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kind.is_empty()
    }

    /// Index range covered by this block.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Gaussian prior for one fixed effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectPrior {
    pub mean: f64,
    pub variance: f64,
}

impl FixedEffectPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "fixed-effect prior needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }
}

/// Prior for one hyperparameter group. Entries are listed in internal-slot
/// order; a Wishart entry consumes the three consecutive slots of a
/// [`LatentBlockKind::BivariateIid`] block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperPrior {
    /// Gamma(shape, rate) on the precision `exp(theta)`.
    GammaOnPrecision { shape: f64, rate: f64 },
    /// Gaussian directly on the internal-scale parameter.
    GaussianOnInternal { mean: f64, variance: f64 },
    /// Wishart on a bivariate block's 2x2 precision matrix, with diagonal
    /// scale matrix `diag(scale)`. The density convention is
    /// `|P|^((df-3)/2) exp(-tr(V^-1 P)/2)` so the prior mean is `df * V`.
    WishartOnPrecision2x2 { df: f64, scale: [f64; 2] },
}

impl HyperPrior {
    /// Number of internal hyperparameter slots the prior covers.
    pub fn slots(&self) -> usize {
        match self {
            HyperPrior::WishartOnPrecision2x2 { .. } => 3,
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            HyperPrior::GammaOnPrecision { shape, rate } => {
                if shape > 0.0 && rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "gamma prior needs shape > 0 and rate > 0, got ({shape}, {rate})"
                    )))
                }
            }
            HyperPrior::GaussianOnInternal { variance, .. } => {
                if variance > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "gaussian prior needs variance > 0, got {variance}"
                    )))
                }
            }
            HyperPrior::WishartOnPrecision2x2 { df, scale } => {
                if df > 1.0 && scale[0] > 0.0 && scale[1] > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "wishart prior needs df > 1 and positive scale, got ({df}, {scale:?})"
                    )))
                }
            }
        }
    }
}

/// Observation likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodFamily {
    BernoulliLogit,
    /// Binomial with per-observation trial counts from [`ModelSpec::trials`].
    BinomialLogit,
    PoissonLog,
    /// Gaussian observations with known precision. Laplace approximations are
    /// exact here, which makes this family the exactness oracle of the test
    /// suites.
    GaussianIdentity { precision: f64 },
}

/// Sparse observation-to-latent incidence map: for observation `j` the linear
/// predictor is `eta_j = sum_k coef * x[index]` over `row(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMap {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl DesignMap {
    pub fn from_triplets(
        n_obs: usize,
        n_latent: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_obs];
        let mut cols = vec![Vec::new(); n_latent];
        for &(obs, latent, coef) in triplets {
            if obs >= n_obs {
                return Err(Error::InvalidModel(format!(
                    "design references observation {obs} but n_obs = {n_obs}"
                )));
            }
            if latent >= n_latent {
                return Err(Error::InvalidModel(format!(
                    "design references latent index {latent} but n = {n_latent}"
                )));
            }
            if !coef.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "design coefficient for ({obs}, {latent}) is not finite"
                )));
            }
            rows[obs].push((latent, coef));
            cols[latent].push((obs, coef));
        }
        Ok(Self { rows, cols })
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_latent(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, obs: usize) -> &[(usize, f64)] {
        &self.rows[obs]
    }

    pub fn col(&self, latent: usize) -> &[(usize, f64)] {
        &self.cols[latent]
    }

    /// Linear predictors `eta = A x`.
    pub fn linear_predictor(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(i, c)| c * x[i]).sum())
            .collect()
    }
}

/// Full generative model specification. Immutable after construction and safe
/// to share across threads; all operations on it are pure.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    blocks: Vec<LatentBlock>,
    design: DesignMap,
    likelihood: LikelihoodFamily,
    trials: Option<Vec<u32>>,
    hyper_priors: Vec<HyperPrior>,
    fixed_prior: Vec<FixedEffectPrior>,
    fixed_idx: Vec<usize>,
    n_latent: usize,
    n_hyper: usize,
}

impl ModelSpec {
    /// Assembles and validates a model.
    ///
    /// `fixed_prior` lists one prior per fixed-effect coefficient, in block
    /// order. The fixed-effect index set is derived: all `FixedEffects`
    /// entries plus any random-effect block of length one.
    pub fn new(
        block_kinds: Vec<LatentBlockKind>,
        design_triplets: &[(usize, usize, f64)],
        n_obs: usize,
        likelihood: LikelihoodFamily,
        trials: Option<Vec<u32>>,
        hyper_priors: Vec<HyperPrior>,
        fixed_prior: Vec<FixedEffectPrior>,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(block_kinds.len());
        let mut offset = 0;
        for kind in block_kinds {
            let len = kind.len();
            if len == 0 {
                return Err(Error::InvalidModel("empty latent block".into()));
            }
            blocks.push(LatentBlock { kind, offset });
            offset += len;
        }
        let n_latent = offset;
        if n_latent == 0 {
            return Err(Error::InvalidModel("model has no latent variables".into()));
        }

        let n_hyper: usize = hyper_priors.iter().map(HyperPrior::slots).sum();
        for prior in &hyper_priors {
            prior.validate()?;
        }

        // Map each hyper slot to the prior entry covering it.
        let slot_prior = slot_priors(&hyper_priors);

        let n_fixed_coeffs: usize = blocks
            .iter()
            .map(|b| match b.kind {
                LatentBlockKind::FixedEffects { count } => count,
                _ => 0,
            })
            .sum();
        if fixed_prior.len() != n_fixed_coeffs {
            return Err(Error::InvalidModel(format!(
                "{} fixed-effect priors supplied for {} fixed effects",
                fixed_prior.len(),
                n_fixed_coeffs
            )));
        }
        for p in &fixed_prior {
            FixedEffectPrior::new(p.mean, p.variance)?;
        }

        // Per-block hyperparameter wiring.
        for b in &blocks {
            match b.kind {
                LatentBlockKind::FixedEffects { .. } => {}
                LatentBlockKind::IidNormal {
                    precision_hyper, ..
                } => {
                    check_scalar_slot(&slot_prior, precision_hyper, n_hyper, "iid_normal")?;
                }
                LatentBlockKind::BivariateIid { hyper_indices, .. } => {
                    let [a, b3, c] = hyper_indices;
                    if b3 != a + 1 || c != a + 2 || c >= n_hyper {
                        return Err(Error::InvalidModel(
                            "bivariate block needs three consecutive hyper slots".into(),
                        ));
                    }
                    match slot_prior[a] {
                        Some((_, HyperPrior::WishartOnPrecision2x2 { .. })) => {}
                        _ => {
                            return Err(Error::InvalidModel(
                                "bivariate block requires a wishart prior on its slots".into(),
                            ))
                        }
                    }
                }
                LatentBlockKind::Ar1 {
                    log_precision_hyper,
                    correlation_hyper,
                    ..
                } => {
                    check_scalar_slot(&slot_prior, log_precision_hyper, n_hyper, "ar1 precision")?;
                    check_scalar_slot(&slot_prior, correlation_hyper, n_hyper, "ar1 correlation")?;
                    if matches!(
                        slot_prior[correlation_hyper],
                        Some((_, HyperPrior::GammaOnPrecision { .. }))
                    ) {
                        return Err(Error::InvalidModel(
                            "gamma-on-precision prior is not valid for a correlation slot".into(),
                        ));
                    }
                }
            }
        }

        let design = DesignMap::from_triplets(n_obs, n_latent, design_triplets)?;

        if let LikelihoodFamily::GaussianIdentity { precision } = likelihood {
            if !(precision > 0.0 && precision.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "gaussian likelihood needs positive known precision, got {precision}"
                )));
            }
        }
        if matches!(likelihood, LikelihoodFamily::BinomialLogit) {
            match &trials {
                Some(t) if t.len() == n_obs => {
                    if t.iter().any(|&m| m == 0) {
                        return Err(Error::InvalidModel("binomial trial count of zero".into()));
                    }
                }
                _ => {
                    return Err(Error::InvalidModel(
                        "binomial likelihood needs one trial count per observation".into(),
                    ))
                }
            }
        }

        // Fixed-effect index set: fixed blocks plus length-one random blocks.
        let mut fixed_idx = Vec::new();
        for b in &blocks {
            match b.kind {
                LatentBlockKind::FixedEffects { .. } => fixed_idx.extend(b.range()),
                _ => {
                    if b.len() == 1 {
                        fixed_idx.extend(b.range());
                    }
                }
            }
        }

        Ok(Self {
            blocks,
            design,
            likelihood,
            trials,
            hyper_priors,
            fixed_prior,
            fixed_idx,
            n_latent,
            n_hyper,
        })
    }

    pub fn blocks(&self) -> &[LatentBlock] {
        &self.blocks
    }

    pub fn design(&self) -> &DesignMap {
        &self.design
    }

    pub fn likelihood(&self) -> LikelihoodFamily {
        self.likelihood
    }

    pub fn hyper_priors(&self) -> &[HyperPrior] {
        &self.hyper_priors
    }

    pub fn fixed_effect_priors(&self) -> &[FixedEffectPrior] {
        &self.fixed_prior
    }

    /// The fixed-effect index set (sorted).
    pub fn fixed_idx(&self) -> &[usize] {
        &self.fixed_idx
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed_idx.len()
    }

    pub fn n_latent(&self) -> usize {
        self.n_latent
    }

    pub fn n_hyper(&self) -> usize {
        self.n_hyper
    }

    pub fn n_obs(&self) -> usize {
        self.design.n_obs()
    }

    /// Trial count for observation `j` (binomial only).
    pub fn trials(&self, obs: usize) -> Option<u32> {
        self.trials.as_ref().map(|t| t[obs])
    }

    pub fn check_hyper(&self, theta: &HyperParams) -> Result<()> {
        if theta.len() != self.n_hyper {
            return Err(Error::InvalidHyper(format!(
                "model has {} hyperparameters, got {}",
                self.n_hyper,
                theta.len()
            )));
        }
        Ok(())
    }

    /// Validates an observation vector against the likelihood support.
    pub fn validate_observations(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n_obs() {
            return Err(Error::BadObservation(format!(
                "expected {} observations, got {}",
                self.n_obs(),
                y.len()
            )));
        }
        for (j, &yj) in y.iter().enumerate() {
            likelihood::check_support(self.likelihood, yj, self.trials(j).map(f64::from))
                .map_err(|m| Error::BadObservation(format!("observation {j}: {m}")))?;
        }
        Ok(())
    }

    /// Log-likelihood value and first three derivatives with respect to the
    /// linear predictor for observation `obs`.
    pub fn loglik_terms(&self, obs: usize, eta: f64, y: f64) -> Result<LoglikTerms> {
        likelihood::check_support(self.likelihood, y, self.trials(obs).map(f64::from))
            .map_err(|m| Error::BadObservation(format!("observation {obs}: {m}")))?;
        Ok(likelihood::terms(
            self.likelihood,
            eta,
            y,
            self.trials(obs).map(f64::from),
        ))
    }

    /// As [`Self::loglik_terms`] but without support checks, for hot loops
    /// where observations have been validated once up front.
    pub(crate) fn loglik_terms_unchecked(&self, obs: usize, eta: f64, y: f64) -> LoglikTerms {
        likelihood::terms(self.likelihood, eta, y, self.trials(obs).map(f64::from))
    }

    /// Log-likelihood value only, dropping eta-free normalization constants;
    /// exact for differences in eta. Sampler hot path.
    pub(crate) fn loglik_value_unnormalized(&self, obs: usize, eta: f64, y: f64) -> f64 {
        likelihood::value_unnormalized(self.likelihood, eta, y, self.trials(obs).map(f64::from))
    }

    /// Sum of log-likelihood values at the linear predictors `eta`.
    pub fn loglik_sum(&self, eta: &[f64], y: &[f64]) -> f64 {
        eta.iter()
            .zip(y)
            .enumerate()
            .map(|(j, (&e, &yj))| likelihood::value(self.likelihood, e, yj, self.trials(j).map(f64::from)))
            .sum()
    }
}

fn slot_priors(priors: &[HyperPrior]) -> Vec<Option<(usize, &HyperPrior)>> {
    let mut out = Vec::new();
    for (k, p) in priors.iter().enumerate() {
        for _ in 0..p.slots() {
            out.push(Some((k, p)));
        }
    }
    out
}

fn check_scalar_slot(
    slot_prior: &[Option<(usize, &HyperPrior)>],
    slot: usize,
    n_hyper: usize,
    what: &str,
) -> Result<()> {
    if slot >= n_hyper {
        return Err(Error::InvalidModel(format!(
            "{what} references hyper slot {slot} but p = {n_hyper}"
        )));
    }
    match slot_prior[slot] {
        Some((_, HyperPrior::WishartOnPrecision2x2 { .. })) => Err(Error::InvalidModel(format!(
            "{what} cannot share a wishart-covered hyper slot"
        ))),
        Some(_) => Ok(()),
        None => Err(Error::InvalidModel(format!(
            "{what} hyper slot {slot} has no prior"
        ))),
    }
}
