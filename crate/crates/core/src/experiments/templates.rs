//! Built-in model templates for the simulation experiments.

use crate::error::{Error, Result};
use crate::model::{
    internal_from_correlation, FixedEffectPrior, HyperParams, HyperPrior, LatentBlockKind,
    ModelSpec, SimulationTruth,
};
use crate::LikelihoodFamily;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Bernoulli intercept + per-observation iid effect.
    Minimal,
    /// Binomial random-intercept longitudinal model.
    Model07,
    /// Binomial random-intercept-and-slope model with a Wishart prior.
    Model08,
    /// Repeated-measures binary model with subject intercepts and jittered
    /// visit times.
    ToenailLike,
    /// Poisson intercept + per-observation iid effect.
    Poisson,
    /// Bernoulli intercept + latent AR1 process.
    Ar1,
    /// Simulate from model08, estimate with model07.
    Misspecified,
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TemplateId::Minimal => "minimal",
            TemplateId::Model07 => "model07",
            TemplateId::Model08 => "model08",
            TemplateId::ToenailLike => "toenail_like",
            TemplateId::Poisson => "poisson",
            TemplateId::Ar1 => "ar1",
            TemplateId::Misspecified => "misspecified",
        };
        f.write_str(s)
    }
}

/// Template parameter overrides; anything left unset falls back to the
/// template's standard settings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    /// True fixed-effect values.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    /// Cluster count (model07/08), series length (ar1), or observation count
    /// (minimal/poisson).
    #[serde(default)]
    pub clusters: Option<usize>,
    /// Observations per cluster.
    #[serde(default)]
    pub n_i: Option<usize>,
    /// Binomial trial count.
    #[serde(default)]
    pub m: Option<u32>,
    /// Random-effect variance (minimal/poisson/toenail: sigma^2;
    /// model07: sigma_0^2).
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    /// model08: variance of the random slopes.
    #[serde(default)]
    pub sigma1_sq: Option<f64>,
    /// model08 random-effect correlation, or ar1 lag-one correlation.
    #[serde(default)]
    pub rho: Option<f64>,
    /// ar1 innovation precision tau.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Subject count for the toenail layout.
    #[serde(default)]
    pub subjects: Option<usize>,
    /// Override for the fixed-effect prior variance.
    #[serde(default)]
    pub fixed_prior_variance: Option<f64>,
    /// Override for the random-effect precision prior.
    #[serde(default)]
    pub precision_prior: Option<HyperPrior>,
}

/// What the report compares, and how to read it from fits and chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportParam {
    pub name: String,
    pub kind: ReportKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// Fixed-effect posterior; payload is the position within the fixed set.
    LatentFixed(usize),
    /// Internal-scale hyperparameter axis.
    HyperInternal(usize),
    /// `sigma^2 = exp(-theta_k)` for a precision slot.
    HyperSigma2(usize),
    /// `sigma = exp(-theta_k / 2)`.
    HyperSigma(usize),
}

/// A template instantiated into concrete model specifications.
pub struct BuiltTemplate {
    pub sim_spec: ModelSpec,
    pub fit_spec: ModelSpec,
    pub truth: SimulationTruth,
    pub report_params: Vec<ReportParam>,
}

fn beta_or(params: &TemplateParams, default: &[f64], len: usize) -> Result<Vec<f64>> {
    let beta = params.beta.clone().unwrap_or_else(|| default.to_vec());
    if beta.len() != len {
        return Err(Error::Config(format!(
            "template needs {len} fixed-effect values, got {}",
            beta.len()
        )));
    }
    Ok(beta)
}

fn log_precision(variance: f64) -> f64 {
    -(variance.ln())
}

fn scalar_reports(precision_slot: usize, n_beta: usize) -> Vec<ReportParam> {
    let mut out = Vec::new();
    out.push(ReportParam {
        name: format!("sigma2_{precision_slot}"),
        kind: ReportKind::HyperSigma2(precision_slot),
    });
    out.push(ReportParam {
        name: format!("sigma_{precision_slot}"),
        kind: ReportKind::HyperSigma(precision_slot),
    });
    out.push(ReportParam {
        name: format!("theta_{precision_slot}"),
        kind: ReportKind::HyperInternal(precision_slot),
    });
    for k in 0..n_beta {
        out.push(ReportParam {
            name: format!("beta_{k}"),
            kind: ReportKind::LatentFixed(k),
        });
    }
    out
}

/// Instantiates a template. `design_seed` drives any randomized covariates
/// (only the toenail layout uses it); outcome randomness is separate.
pub fn build(template: TemplateId, params: &TemplateParams, design_seed: u64) -> Result<BuiltTemplate> {
    match template {
        TemplateId::Minimal => build_intercept_iid(
            params,
            LikelihoodFamily::BernoulliLogit,
            &[2.0],
            100,
            HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 },
            1.0,
        ),
        TemplateId::Poisson => build_intercept_iid(
            params,
            LikelihoodFamily::PoissonLog,
            &[0.0],
            300,
            HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 },
            1.0,
        ),
        TemplateId::Model07 => {
            let built = build_longitudinal(params, false)?;
            Ok(built)
        }
        TemplateId::Model08 => {
            let built = build_longitudinal(params, true)?;
            Ok(built)
        }
        TemplateId::Misspecified => {
            // Simulate from the random-slope model, estimate the intercept-only
            // one. The fit model never sees slope parameters.
            let sim = build_longitudinal(params, true)?;
            let mut p07 = params.clone();
            // The intercept-only fit keeps its own standard priors but must
            // share the simulation's trial count.
            p07.sigma_sq = None;
            p07.sigma1_sq = None;
            p07.rho = None;
            p07.m = Some(params.m.unwrap_or(2));
            let fit = build_longitudinal(&p07, false)?;
            Ok(BuiltTemplate {
                sim_spec: sim.sim_spec,
                fit_spec: fit.fit_spec,
                truth: sim.truth,
                report_params: fit.report_params,
            })
        }
        TemplateId::ToenailLike => build_toenail(params, design_seed),
        TemplateId::Ar1 => build_ar1(params),
    }
}

/// Shared shape of the minimal and Poisson examples: one intercept and one
/// iid effect per observation.
fn build_intercept_iid(
    params: &TemplateParams,
    family: LikelihoodFamily,
    default_beta: &[f64],
    default_n: usize,
    default_prior: HyperPrior,
    default_sigma_sq: f64,
) -> Result<BuiltTemplate> {
    let n = params.clusters.unwrap_or(default_n);
    let beta = beta_or(params, default_beta, 1)?;
    let sigma_sq = params.sigma_sq.unwrap_or(default_sigma_sq);
    let mut triplets = Vec::with_capacity(2 * n);
    for j in 0..n {
        triplets.push((j, 0, 1.0));
        triplets.push((j, 1 + j, 1.0));
    }
    let spec = ModelSpec::new(
        vec![
            LatentBlockKind::FixedEffects { count: 1 },
            LatentBlockKind::IidNormal { clusters: n, precision_hyper: 0 },
        ],
        &triplets,
        n,
        family,
        None,
        vec![params.precision_prior.clone().unwrap_or(default_prior)],
        vec![FixedEffectPrior {
            mean: 0.0,
            variance: params.fixed_prior_variance.unwrap_or(1.0),
        }],
    )?;
    let truth = SimulationTruth {
        fixed: beta,
        hyper: HyperParams::new(vec![log_precision(sigma_sq)])?,
    };
    Ok(BuiltTemplate {
        sim_spec: spec.clone(),
        fit_spec: spec,
        truth,
        report_params: scalar_reports(0, 1),
    })
}

/// The longitudinal binomial designs: clusters x n_i visits at times evenly
/// spaced over [-3, 3], group covariate 0 for the first half of clusters.
fn longitudinal_design(clusters: usize, n_i: usize, slopes: bool) -> (Vec<(usize, usize, f64)>, usize) {
    let times: Vec<f64> = if n_i == 1 {
        vec![0.0]
    } else {
        (0..n_i)
            .map(|j| -3.0 + 6.0 * j as f64 / (n_i - 1) as f64)
            .collect()
    };
    let mut triplets = Vec::new();
    let mut obs = 0usize;
    let re_per_cluster = if slopes { 2 } else { 1 };
    for i in 0..clusters {
        let group = if i < clusters / 2 { 0.0 } else { 1.0 };
        for &t in &times {
            triplets.push((obs, 0, 1.0));
            triplets.push((obs, 1, t));
            triplets.push((obs, 2, group));
            triplets.push((obs, 3, t * group));
            let base = 4 + re_per_cluster * i;
            triplets.push((obs, base, 1.0));
            if slopes {
                triplets.push((obs, base + 1, t));
            }
            obs += 1;
        }
    }
    (triplets, obs)
}

fn build_longitudinal(params: &TemplateParams, slopes: bool) -> Result<BuiltTemplate> {
    let clusters = params.clusters.unwrap_or(100);
    let n_i = params.n_i.unwrap_or(7);
    let m = params.m.unwrap_or(if slopes { 2 } else { 1 });
    let beta = beta_or(params, &[-2.5, 1.0, -1.0, -0.5], 4)?;
    let (triplets, n_obs) = longitudinal_design(clusters, n_i, slopes);
    let fixed = vec![
        FixedEffectPrior {
            mean: 0.0,
            variance: params.fixed_prior_variance.unwrap_or(1000.0),
        };
        4
    ];
    let trials = Some(vec![m; n_obs]);

    if slopes {
        let sigma0_sq = params.sigma_sq.unwrap_or(0.5);
        let sigma1_sq = params.sigma1_sq.unwrap_or(0.25);
        let rho = params.rho.unwrap_or(0.0);
        let spec = ModelSpec::new(
            vec![
                LatentBlockKind::FixedEffects { count: 4 },
                LatentBlockKind::BivariateIid {
                    clusters,
                    hyper_indices: [0, 1, 2],
                },
            ],
            &triplets,
            n_obs,
            LikelihoodFamily::BinomialLogit,
            trials,
            vec![params
                .precision_prior
                .clone()
                .unwrap_or(HyperPrior::WishartOnPrecision2x2 {
                    df: 3.0,
                    scale: [0.17, 0.025],
                })],
            fixed,
        )?;
        let truth = SimulationTruth {
            fixed: beta,
            hyper: HyperParams::new(vec![
                log_precision(sigma0_sq),
                log_precision(sigma1_sq),
                internal_from_correlation(rho),
            ])?,
        };
        let mut report_params = vec![
            ReportParam { name: "theta_0".into(), kind: ReportKind::HyperInternal(0) },
            ReportParam { name: "theta_1".into(), kind: ReportKind::HyperInternal(1) },
            ReportParam { name: "theta_2".into(), kind: ReportKind::HyperInternal(2) },
        ];
        for k in 0..4 {
            report_params.push(ReportParam {
                name: format!("beta_{k}"),
                kind: ReportKind::LatentFixed(k),
            });
        }
        Ok(BuiltTemplate {
            sim_spec: spec.clone(),
            fit_spec: spec,
            truth,
            report_params,
        })
    } else {
        let sigma0_sq = params.sigma_sq.unwrap_or(1.0);
        let spec = ModelSpec::new(
            vec![
                LatentBlockKind::FixedEffects { count: 4 },
                LatentBlockKind::IidNormal { clusters, precision_hyper: 0 },
            ],
            &triplets,
            n_obs,
            LikelihoodFamily::BinomialLogit,
            trials,
            vec![params
                .precision_prior
                .clone()
                .unwrap_or(HyperPrior::GammaOnPrecision {
                    shape: 0.5,
                    rate: 0.0164,
                })],
            fixed,
        )?;
        let truth = SimulationTruth {
            fixed: beta,
            hyper: HyperParams::new(vec![log_precision(sigma0_sq)])?,
        };
        Ok(BuiltTemplate {
            sim_spec: spec.clone(),
            fit_spec: spec,
            truth,
            report_params: scalar_reports(0, 4),
        })
    }
}

/// Repeated-measures binary layout: subject intercepts, alternating
/// treatment assignment, visit months on the clinical schedule with
/// deterministic per-seed jitter.
fn build_toenail(params: &TemplateParams, design_seed: u64) -> Result<BuiltTemplate> {
    let subjects = params.subjects.unwrap_or(294);
    let beta = beta_or(params, &[-1.6, -0.2, -0.4, -0.15], 4)?;
    let sigma_sq = params.sigma_sq.unwrap_or(16.0);
    let schedule = [0.0, 1.0, 2.0, 3.0, 6.0, 9.0, 12.0];
    let mut rng = ChaCha8Rng::seed_from_u64(design_seed);
    let mut triplets = Vec::new();
    let mut obs = 0usize;
    for i in 0..subjects {
        let treatment = (i % 2) as f64;
        for (v, &month) in schedule.iter().enumerate() {
            let jitter = if v == 0 {
                0.0
            } else {
                (rng.random::<f64>() - 0.5) * 0.6
            };
            let time = (month + jitter).max(0.0);
            triplets.push((obs, 0, 1.0));
            triplets.push((obs, 1, treatment));
            triplets.push((obs, 2, time));
            triplets.push((obs, 3, treatment * time));
            triplets.push((obs, 4 + i, 1.0));
            obs += 1;
        }
    }
    let spec = ModelSpec::new(
        vec![
            LatentBlockKind::FixedEffects { count: 4 },
            LatentBlockKind::IidNormal {
                clusters: subjects,
                precision_hyper: 0,
            },
        ],
        &triplets,
        obs,
        LikelihoodFamily::BernoulliLogit,
        None,
        vec![params
            .precision_prior
            .clone()
            .unwrap_or(HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 })],
        vec![
            FixedEffectPrior {
                mean: 0.0,
                variance: params.fixed_prior_variance.unwrap_or(1e4),
            };
            4
        ],
    )?;
    let truth = SimulationTruth {
        fixed: beta,
        hyper: HyperParams::new(vec![log_precision(sigma_sq)])?,
    };
    Ok(BuiltTemplate {
        sim_spec: spec.clone(),
        fit_spec: spec,
        truth,
        report_params: scalar_reports(0, 4),
    })
}

fn build_ar1(params: &TemplateParams) -> Result<BuiltTemplate> {
    let length = params.clusters.unwrap_or(100);
    let beta = beta_or(params, &[2.0], 1)?;
    let rho = params.rho.unwrap_or(0.5);
    let tau = params.tau.unwrap_or(1.0);
    let kappa = tau * (1.0 - rho * rho);
    let mut triplets = Vec::with_capacity(2 * length);
    for j in 0..length {
        triplets.push((j, 0, 1.0));
        triplets.push((j, 1 + j, 1.0));
    }
    let spec = ModelSpec::new(
        vec![
            LatentBlockKind::FixedEffects { count: 1 },
            LatentBlockKind::Ar1 {
                length,
                log_precision_hyper: 0,
                correlation_hyper: 1,
            },
        ],
        &triplets,
        length,
        LikelihoodFamily::BernoulliLogit,
        None,
        vec![
            params
                .precision_prior
                .clone()
                .unwrap_or(HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 }),
            HyperPrior::GaussianOnInternal { mean: 0.0, variance: 1.0 },
        ],
        vec![FixedEffectPrior {
            mean: 0.0,
            variance: params.fixed_prior_variance.unwrap_or(1.0),
        }],
    )?;
    let truth = SimulationTruth {
        fixed: beta,
        hyper: HyperParams::new(vec![kappa.ln(), internal_from_correlation(rho)])?,
    };
    Ok(BuiltTemplate {
        sim_spec: spec.clone(),
        fit_spec: spec,
        truth,
        report_params: vec![
            ReportParam { name: "beta_0".into(), kind: ReportKind::LatentFixed(0) },
            ReportParam { name: "theta_0".into(), kind: ReportKind::HyperInternal(0) },
            ReportParam { name: "theta_1".into(), kind: ReportKind::HyperInternal(1) },
        ],
    })
}
