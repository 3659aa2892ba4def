//! Per-observation log-likelihoods and their derivatives in the linear
//! predictor.

use super::LikelihoodFamily;
use statrs::function::gamma::ln_gamma;

/// Value and first three derivatives of `log pi(y | eta)` with respect to
/// `eta`.
#[derive(Debug, Clone, Copy)]
pub struct LoglikTerms {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn check_support(
    family: LikelihoodFamily,
    y: f64,
    trials: Option<f64>,
) -> std::result::Result<(), String> {
    match family {
        LikelihoodFamily::BernoulliLogit => {
            if y == 0.0 || y == 1.0 {
                Ok(())
            } else {
                Err(format!("bernoulli outcome must be 0 or 1, got {y}"))
            }
        }
        LikelihoodFamily::BinomialLogit => {
            let m = trials.unwrap_or(f64::NAN);
            if y >= 0.0 && y <= m && y.fract() == 0.0 {
                Ok(())
            } else {
                Err(format!("binomial outcome must be an integer in 0..={m}, got {y}"))
            }
        }
        LikelihoodFamily::PoissonLog => {
            if y >= 0.0 && y.fract() == 0.0 {
                Ok(())
            } else {
                Err(format!("poisson outcome must be a nonnegative integer, got {y}"))
            }
        }
        LikelihoodFamily::GaussianIdentity { .. } => {
            if y.is_finite() {
                Ok(())
            } else {
                Err(format!("gaussian outcome must be finite, got {y}"))
            }
        }
    }
}

pub(super) fn terms(family: LikelihoodFamily, eta: f64, y: f64, trials: Option<f64>) -> LoglikTerms {
    match family {
        LikelihoodFamily::BernoulliLogit => {
            let p = logistic(eta);
            let w = p * (1.0 - p);
            LoglikTerms {
                value: y * eta - softplus(eta),
                d1: y - p,
                d2: -w,
                d3: -w * (1.0 - 2.0 * p),
            }
        }
        LikelihoodFamily::BinomialLogit => {
            let m = trials.expect("binomial trials checked at model construction");
            let p = logistic(eta);
            let w = m * p * (1.0 - p);
            let binom = ln_gamma(m + 1.0) - ln_gamma(y + 1.0) - ln_gamma(m - y + 1.0);
            LoglikTerms {
                value: binom + y * eta - m * softplus(eta),
                d1: y - m * p,
                d2: -w,
                d3: -w * (1.0 - 2.0 * p),
            }
        }
        LikelihoodFamily::PoissonLog => {
            let mu = eta.exp();
            LoglikTerms {
                value: y * eta - mu - ln_gamma(y + 1.0),
                d1: y - mu,
                d2: -mu,
                d3: -mu,
            }
        }
        LikelihoodFamily::GaussianIdentity { precision } => {
            let r = y - eta;
            LoglikTerms {
                value: 0.5 * precision.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    - 0.5 * precision * r * r,
                d1: precision * r,
                d2: -precision,
                d3: 0.0,
            }
        }
    }
}

/// Log-likelihood without the eta-free normalization terms; differences in
/// eta are exact, which is all the samplers need.
pub(super) fn value_unnormalized(
    family: LikelihoodFamily,
    eta: f64,
    y: f64,
    trials: Option<f64>,
) -> f64 {
    match family {
        LikelihoodFamily::BernoulliLogit => y * eta - softplus(eta),
        LikelihoodFamily::BinomialLogit => {
            let m = trials.expect("binomial trials checked at model construction");
            y * eta - m * softplus(eta)
        }
        LikelihoodFamily::PoissonLog => y * eta - eta.exp(),
        LikelihoodFamily::GaussianIdentity { precision } => {
            let r = y - eta;
            -0.5 * precision * r * r
        }
    }
}

pub(super) fn value(family: LikelihoodFamily, eta: f64, y: f64, trials: Option<f64>) -> f64 {
    match family {
        LikelihoodFamily::BernoulliLogit => y * eta - softplus(eta),
        LikelihoodFamily::BinomialLogit => {
            let m = trials.expect("binomial trials checked at model construction");
            let binom = ln_gamma(m + 1.0) - ln_gamma(y + 1.0) - ln_gamma(m - y + 1.0);
            binom + y * eta - m * softplus(eta)
        }
        LikelihoodFamily::PoissonLog => y * eta - eta.exp() - ln_gamma(y + 1.0),
        LikelihoodFamily::GaussianIdentity { precision } => {
            let r = y - eta;
            0.5 * precision.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * precision * r * r
        }
    }
}
