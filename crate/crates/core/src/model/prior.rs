//! Hyperparameter log priors on the internal scale.

use super::{correlation_from_internal, HyperParams, HyperPrior, ModelSpec};
use crate::error::Result;
use statrs::function::gamma::ln_gamma;

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Sum of hyperparameter log prior densities evaluated on the internal scale,
/// including the Jacobian of each transform.
pub fn log_prior_hyper(spec: &ModelSpec, theta: &HyperParams) -> Result<f64> {
    spec.check_hyper(theta)?;
    let mut total = 0.0;
    let mut slot = 0usize;
    for prior in spec.hyper_priors() {
        total += log_prior_group(prior, theta.values(), slot);
        slot += prior.slots();
    }
    Ok(total)
}

/// Log prior of one prior group starting at internal slot `slot`.
pub(crate) fn log_prior_group(prior: &HyperPrior, theta: &[f64], slot: usize) -> f64 {
    match *prior {
        HyperPrior::GammaOnPrecision { shape, rate } => {
            // kappa = exp(t): Gamma density at kappa plus log-Jacobian t.
            let t = theta[slot];
            shape * rate.ln() - ln_gamma(shape) + shape * t - rate * t.exp()
        }
        HyperPrior::GaussianOnInternal { mean, variance } => {
            let d = theta[slot] - mean;
            -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * d * d / variance
        }
        HyperPrior::WishartOnPrecision2x2 { df, scale } => {
            let t1 = theta[slot];
            let t2 = theta[slot + 1];
            let t3 = theta[slot + 2];
            let (p00, p11, p01, log_det_p) = super::precision::bivariate_precision(t1, t2, t3);
            let rho = correlation_from_internal(t3);
            let one_m = 1.0 - rho * rho;
            // Wishart(df, V = diag(scale)), d = 2:
            //   log pi(P) = (df-3)/2 log|P| - tr(V^-1 P)/2 - df log 2
            //               - df/2 log|V| - log Gamma_2(df/2)
            let trace = p00 / scale[0] + p11 / scale[1];
            let log_gamma2 = 0.5 * LN_PI + ln_gamma(0.5 * df) + ln_gamma(0.5 * (df - 1.0));
            let log_wishart = 0.5 * (df - 3.0) * log_det_p
                - 0.5 * trace
                - df * std::f64::consts::LN_2
                - 0.5 * df * (scale[0].ln() + scale[1].ln())
                - log_gamma2;
            // |d(P00, P11, P01)/d(t1, t2, t3)| = exp(3 (t1 + t2) / 2) / (2 (1 - rho^2)^2).
            let log_jac = 1.5 * (t1 + t2) - 2.0 * one_m.ln() - std::f64::consts::LN_2;
            let _ = p01;
            log_wishart + log_jac
        }
    }
}
