//! Latent prior precision assembly.

use super::{correlation_from_internal, HyperParams, LatentBlockKind, ModelSpec};
use crate::error::Result;
use nalgebra::{DMatrix, DVector};

/// Prior precision of the latent field at fixed hyperparameters, with its
/// log-determinant and the prior mean vector (nonzero only for fixed
/// effects).
#[derive(Debug, Clone)]
pub struct PriorPrecision {
    pub matrix: DMatrix<f64>,
    pub log_det: f64,
    pub mean: DVector<f64>,
}

impl PriorPrecision {
    /// Quadratic form `(x - mean)' Q (x - mean)`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        d.dot(&(&self.matrix * &d))
    }

    /// `log pi(x | theta)` including all constants.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let n = self.mean.len() as f64;
        0.5 * self.log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.quad_form(x)
    }
}

/// Reconstructs the 2x2 precision of a bivariate block from its internal
/// parameters `(log sigma0^-2, log sigma1^-2, log((1+rho)/(1-rho)))`, where
/// `rho` is the correlation of the implied covariance. Returns
/// `(p00, p11, p01, log_det)`.
pub(crate) fn bivariate_precision(t1: f64, t2: f64, t3: f64) -> (f64, f64, f64, f64) {
    let rho = correlation_from_internal(t3);
    let one_m = 1.0 - rho * rho;
    let p00 = t1.exp() / one_m;
    let p11 = t2.exp() / one_m;
    let p01 = -rho * (0.5 * (t1 + t2)).exp() / one_m;
    let log_det = t1 + t2 - one_m.ln();
    (p00, p11, p01, log_det)
}

/// Builds the block-structured prior precision `Q_prior(theta)` together with
/// its log-determinant.
pub fn build_prior_precision(spec: &ModelSpec, theta: &HyperParams) -> Result<PriorPrecision> {
    spec.check_hyper(theta)?;
    let n = spec.n_latent();
    let mut q = DMatrix::zeros(n, n);
    let mut mean = DVector::zeros(n);
    let mut log_det = 0.0;
    let mut fixed_cursor = 0usize;

    for block in spec.blocks() {
        let off = block.offset();
        match *block.kind() {
            LatentBlockKind::FixedEffects { count } => {
                for k in 0..count {
                    let prior = spec.fixed_effect_priors()[fixed_cursor];
                    fixed_cursor += 1;
                    let prec = 1.0 / prior.variance;
                    q[(off + k, off + k)] = prec;
                    mean[off + k] = prior.mean;
                    log_det += prec.ln();
                }
            }
            LatentBlockKind::IidNormal {
                clusters,
                precision_hyper,
            } => {
                let kappa = theta.get(precision_hyper).exp();
                for k in 0..clusters {
                    q[(off + k, off + k)] = kappa;
                }
                log_det += clusters as f64 * kappa.ln();
            }
            LatentBlockKind::BivariateIid {
                clusters,
                hyper_indices,
            } => {
                let (p00, p11, p01, ld) = bivariate_precision(
                    theta.get(hyper_indices[0]),
                    theta.get(hyper_indices[1]),
                    theta.get(hyper_indices[2]),
                );
                for k in 0..clusters {
                    let i0 = off + 2 * k;
                    q[(i0, i0)] = p00;
                    q[(i0 + 1, i0 + 1)] = p11;
                    q[(i0, i0 + 1)] = p01;
                    q[(i0 + 1, i0)] = p01;
                }
                log_det += clusters as f64 * ld;
            }
            LatentBlockKind::Ar1 {
                length,
                log_precision_hyper,
                correlation_hyper,
            } => {
                let kappa = theta.get(log_precision_hyper).exp();
                if length == 1 {
                    q[(off, off)] = kappa;
                    log_det += kappa.ln();
                } else {
                    let rho = correlation_from_internal(theta.get(correlation_hyper));
                    let tau = kappa / (1.0 - rho * rho);
                    for k in 0..length {
                        let diag = if k == 0 || k == length - 1 {
                            1.0
                        } else {
                            1.0 + rho * rho
                        };
                        q[(off + k, off + k)] = tau * diag;
                        if k + 1 < length {
                            q[(off + k, off + k + 1)] = -tau * rho;
                            q[(off + k + 1, off + k)] = -tau * rho;
                        }
                    }
                    log_det += length as f64 * tau.ln() + (1.0 - rho * rho).ln();
                }
            }
        }
    }

    Ok(PriorPrecision {
        matrix: q,
        log_det,
        mean,
    })
}

/// Change in the latent log prior from moving coordinate `i` by `delta`,
/// computed from the block structure in O(block bandwidth).
pub(crate) fn prior_delta(
    spec: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    i: usize,
    delta: f64,
) -> f64 {
    // -delta * (Q (x - m))_i - 0.5 * delta^2 * Q_ii
    let mut fixed_cursor = 0usize;
    for block in spec.blocks() {
        let off = block.offset();
        let len = block.len();
        if i < off || i >= off + len {
            if let LatentBlockKind::FixedEffects { count } = *block.kind() {
                fixed_cursor += count;
            }
            continue;
        }
        let local = i - off;
        let (row_dot, qii) = match *block.kind() {
            LatentBlockKind::FixedEffects { .. } => {
                let prior = spec.fixed_effect_priors()[fixed_cursor + local];
                let prec = 1.0 / prior.variance;
                (prec * (x[i] - prior.mean), prec)
            }
            LatentBlockKind::IidNormal {
                precision_hyper, ..
            } => {
                let kappa = theta[precision_hyper].exp();
                (kappa * x[i], kappa)
            }
            LatentBlockKind::BivariateIid { hyper_indices, .. } => {
                let (p00, p11, p01, _) = bivariate_precision(
                    theta[hyper_indices[0]],
                    theta[hyper_indices[1]],
                    theta[hyper_indices[2]],
                );
                let pair = off + 2 * (local / 2);
                if local % 2 == 0 {
                    (p00 * x[pair] + p01 * x[pair + 1], p00)
                } else {
                    (p01 * x[pair] + p11 * x[pair + 1], p11)
                }
            }
            LatentBlockKind::Ar1 {
                length,
                log_precision_hyper,
                correlation_hyper,
            } => {
                let kappa = theta[log_precision_hyper].exp();
                if length == 1 {
                    (kappa * x[i], kappa)
                } else {
                    let rho = correlation_from_internal(theta[correlation_hyper]);
                    let tau = kappa / (1.0 - rho * rho);
                    let diag = if local == 0 || local == length - 1 {
                        1.0
                    } else {
                        1.0 + rho * rho
                    };
                    let mut dot = diag * x[i];
                    if local > 0 {
                        dot -= rho * x[i - 1];
                    }
                    if local + 1 < length {
                        dot -= rho * x[i + 1];
                    }
                    (tau * dot, tau * diag)
                }
            }
        };
        return -delta * row_dot - 0.5 * delta * delta * qii;
    }
    unreachable!("latent index {i} not covered by any block");
}

/// Log density of a single block's latent values given `theta`, including the
/// block's log-determinant contribution. Used by random-walk hyperparameter
/// updates.
pub(crate) fn block_log_density(
    spec: &ModelSpec,
    theta: &HyperParams,
    x: &[f64],
    block_idx: usize,
) -> f64 {
    let block = &spec.blocks()[block_idx];
    let off = block.offset();
    match *block.kind() {
        LatentBlockKind::FixedEffects { .. } => 0.0,
        LatentBlockKind::IidNormal {
            clusters,
            precision_hyper,
        } => {
            let kappa = theta.get(precision_hyper).exp();
            let ss: f64 = x[off..off + clusters].iter().map(|v| v * v).sum();
            0.5 * clusters as f64 * kappa.ln() - 0.5 * kappa * ss
        }
        LatentBlockKind::BivariateIid {
            clusters,
            hyper_indices,
        } => {
            let (p00, p11, p01, ld) = bivariate_precision(
                theta.get(hyper_indices[0]),
                theta.get(hyper_indices[1]),
                theta.get(hyper_indices[2]),
            );
            let mut quad = 0.0;
            for k in 0..clusters {
                let b0 = x[off + 2 * k];
                let b1 = x[off + 2 * k + 1];
                quad += p00 * b0 * b0 + p11 * b1 * b1 + 2.0 * p01 * b0 * b1;
            }
            0.5 * clusters as f64 * ld - 0.5 * quad
        }
        LatentBlockKind::Ar1 {
            length,
            log_precision_hyper,
            correlation_hyper,
        } => {
            let kappa = theta.get(log_precision_hyper).exp();
            if length == 1 {
                return 0.5 * kappa.ln() - 0.5 * kappa * x[off] * x[off];
            }
            let rho = correlation_from_internal(theta.get(correlation_hyper));
            let tau = kappa / (1.0 - rho * rho);
            let u = &x[off..off + length];
            let mut quad = u[0] * u[0] + u[length - 1] * u[length - 1];
            for k in 1..length - 1 {
                quad += (1.0 + rho * rho) * u[k] * u[k];
            }
            for k in 0..length - 1 {
                quad -= 2.0 * rho * u[k] * u[k + 1];
            }
            0.5 * (length as f64 * tau.ln() + (1.0 - rho * rho).ln()) - 0.5 * tau * quad
        }
    }
}
