//! Dataset simulation from a model specification.

use super::{correlation_from_internal, HyperParams, LatentBlockKind, LikelihoodFamily, ModelSpec};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// True parameter assignment for a simulation: values for the fixed effects
/// (in block order) and the hyperparameters controlling the random blocks.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    pub fixed: Vec<f64>,
    pub hyper: HyperParams,
}

/// Simulated observations together with the latent draw that produced them.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub y: Vec<f64>,
    pub latent: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Simulates a dataset: fixed effects are set to their true values, random
/// blocks are drawn from their Gaussian priors at the true hyperparameters,
/// and observations are sampled from the likelihood. Deterministic for a
/// fixed seed.
pub fn simulate_dataset(spec: &ModelSpec, truth: &SimulationTruth, seed: u64) -> Result<SimulatedData> {
    spec.check_hyper(&truth.hyper)?;
    let n_fixed_coeffs: usize = spec
        .blocks()
        .iter()
        .map(|b| match *b.kind() {
            LatentBlockKind::FixedEffects { count } => count,
            _ => 0,
        })
        .sum();
    if truth.fixed.len() != n_fixed_coeffs {
        return Err(Error::InvalidArgument(format!(
            "truth supplies {} fixed-effect values, model has {}",
            truth.fixed.len(),
            n_fixed_coeffs
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = truth.hyper.values();
    let mut x = vec![0.0; spec.n_latent()];
    let mut fixed_cursor = 0usize;

    for block in spec.blocks() {
        let off = block.offset();
        match *block.kind() {
            LatentBlockKind::FixedEffects { count } => {
                for k in 0..count {
                    x[off + k] = truth.fixed[fixed_cursor];
                    fixed_cursor += 1;
                }
            }
            LatentBlockKind::IidNormal {
                clusters,
                precision_hyper,
            } => {
                let sd = (-0.5 * theta[precision_hyper]).exp();
                for k in 0..clusters {
                    let z: f64 = rng.sample(StandardNormal);
                    x[off + k] = sd * z;
                }
            }
            LatentBlockKind::BivariateIid {
                clusters,
                hyper_indices,
            } => {
                let (p00, p11, p01, _) = super::precision::bivariate_precision(
                    theta[hyper_indices[0]],
                    theta[hyper_indices[1]],
                    theta[hyper_indices[2]],
                );
                let det = p00 * p11 - p01 * p01;
                let c00 = p11 / det;
                let c11 = p00 / det;
                let c01 = -p01 / det;
                let l00 = c00.sqrt();
                let l10 = c01 / l00;
                let l11 = (c11 - l10 * l10).sqrt();
                for k in 0..clusters {
                    let z0: f64 = rng.sample(StandardNormal);
                    let z1: f64 = rng.sample(StandardNormal);
                    x[off + 2 * k] = l00 * z0;
                    x[off + 2 * k + 1] = l10 * z0 + l11 * z1;
                }
            }
            LatentBlockKind::Ar1 {
                length,
                log_precision_hyper,
                correlation_hyper,
            } => {
                let kappa = theta[log_precision_hyper].exp();
                let rho = correlation_from_internal(theta[correlation_hyper]);
                let marg_sd = kappa.sqrt().recip();
                let innov_sd = marg_sd * (1.0 - rho * rho).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                x[off] = marg_sd * z;
                for k in 1..length {
                    let z: f64 = rng.sample(StandardNormal);
                    x[off + k] = rho * x[off + k - 1] + innov_sd * z;
                }
            }
        }
    }

    let eta = spec.design().linear_predictor(&x);
    let mut y = Vec::with_capacity(eta.len());
    for (j, &e) in eta.iter().enumerate() {
        let obs = match spec.likelihood() {
            LikelihoodFamily::BernoulliLogit => {
                let p = 1.0 / (1.0 + (-e).exp());
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            LikelihoodFamily::BinomialLogit => {
                let m = spec.trials(j).expect("validated at construction");
                let p = 1.0 / (1.0 + (-e).exp());
                let mut count = 0u32;
                for _ in 0..m {
                    if rng.random::<f64>() < p {
                        count += 1;
                    }
                }
                f64::from(count)
            }
            LikelihoodFamily::PoissonLog => {
                let mu = e.exp();
                Poisson::new(mu.max(1e-300))
                    .map_err(|err| Error::InvalidArgument(format!("poisson rate {mu}: {err}")))?
                    .sample(&mut rng)
            }
            LikelihoodFamily::GaussianIdentity { precision } => {
                let z: f64 = rng.sample(StandardNormal);
                e + z / precision.sqrt()
            }
        };
        y.push(obs);
    }

    Ok(SimulatedData { y, latent: x, eta })
}
