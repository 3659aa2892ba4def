//! Copula corrections to the Laplace hyperparameter posterior.
//!
//! The "mean only" correction adds `C(theta) = (mu - mu~)' Q_J (mu - mu~)/2`
//! restricted to the fixed effects; the "mean and skewness" variant replaces
//! the shifted Gaussian with skew-normal marginals through the Gaussian
//! copula. Both are passed through a soft threshold `u f(C/u)` with
//! `f(t) = 2/(1 + exp(-2t)) - 1` and `u = n_f xi` to guard against
//! over-correction.

use crate::error::{Error, Result};
use crate::gauss::GaussianApprox;
use crate::math::{norm_log_pdf, norm_quantile};
use crate::skewnorm::SkewNormalMarginal;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before the
/// normal quantile inside the skew correction; the formula is singular at the
/// distribution tails.
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    None,
    MeanOnly,
    MeanAndSkew,
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrectionMode::None => "none",
            CorrectionMode::MeanOnly => "mean",
            CorrectionMode::MeanAndSkew => "skew",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    pub mode: CorrectionMode,
    /// Correction-factor parameter; larger means less shrinkage.
    pub xi: f64,
}

impl CorrectionConfig {
    pub fn new(mode: CorrectionMode, xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
        }
        Ok(Self { mode, xi })
    }

    pub fn none() -> Self {
        Self { mode: CorrectionMode::None, xi: 10.0 }
    }

    pub fn mean_only() -> Self {
        Self { mode: CorrectionMode::MeanOnly, xi: 10.0 }
    }

    pub fn mean_and_skew() -> Self {
        Self { mode: CorrectionMode::MeanAndSkew, xi: 10.0 }
    }
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self::mean_only()
    }
}

/// Correction evaluated at one hyperparameter point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionResult {
    /// Raw correction before thresholding (nonnegative for the mean-only
    /// variant).
    pub c_raw: f64,
    /// Soft-thresholded value added to the log posterior; `|C_t| < u`.
    pub c_thresholded: f64,
    /// Threshold scale `u = n_f xi`.
    pub u: f64,
    /// Per-effect split of the raw quadratic form (diagnostics).
    pub per_effect: Vec<f64>,
    /// Set when a probability hit the tail clamp inside the skew variant.
    pub tail_clamped: bool,
}

impl CorrectionResult {
    pub fn disabled() -> Self {
        Self {
            c_raw: 0.0,
            c_thresholded: 0.0,
            u: 0.0,
            per_effect: Vec::new(),
            tail_clamped: false,
        }
    }
}

/// Fixed-effects precision `Q_J(theta) = (Sigma_J(theta))^-1`: solve
/// `Q S = E_J`, read off the rows `J`, and invert the small block.
pub fn fixed_effect_precision(ga: &GaussianApprox, fixed_idx: &[usize]) -> Result<DMatrix<f64>> {
    let n_f = fixed_idx.len();
    if n_f == 0 {
        return Err(Error::InvalidArgument("empty fixed-effect index set".into()));
    }
    let mut sigma_j = DMatrix::zeros(n_f, n_f);
    for (col, &j) in fixed_idx.iter().enumerate() {
        let s = ga.covariance_column(j);
        for (row, &i) in fixed_idx.iter().enumerate() {
            sigma_j[(row, col)] = s[i];
        }
    }
    // Symmetrize away factorization round-off.
    let sigma_j = 0.5 * (&sigma_j + sigma_j.transpose());
    match Cholesky::new(sigma_j.clone()) {
        Some(chol) => Ok(chol.inverse()),
        None => {
            let eig = sigma_j.symmetric_eigen();
            let max = eig.eigenvalues.amax();
            let min = eig.eigenvalues.min();
            Err(Error::SingularFixedEffects {
                cond: if min > 0.0 { max / min } else { f64::INFINITY },
            })
        }
    }
}

/// Mean-only correction `C = d' Q_J d / 2` with `d = mu_J - mu~_J`.
pub fn correction_mean_only(mu_j: &[f64], mu_tilde_j: &[f64], q_j: &DMatrix<f64>) -> f64 {
    let d = DVector::from_iterator(mu_j.len(), mu_j.iter().zip(mu_tilde_j).map(|(a, b)| a - b));
    0.5 * d.dot(&(q_j * &d))
}

/// Soft threshold `C_t = u tanh(C / u)` with `u = n_f xi`; sign-preserving,
/// slope one at zero, `|C_t| < u`.
pub fn soft_threshold(c: f64, n_f: usize, xi: f64) -> f64 {
    let u = n_f as f64 * xi;
    if u == 0.0 {
        return 0.0;
    }
    // tanh saturates to exactly 1.0 in floating point; keep the bound strict.
    const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
    u * (c / u).tanh().clamp(-ONE_BELOW, ONE_BELOW)
}

/// Skewness-aware correction restricted to the fixed effects.
///
/// With `r_i = (mu_i - mu~_i)/sigma_i` and `z_i = Phi^-1(F~_i(r_i))`:
///
/// `C_skew = sum_ij Q_J_ij sigma_i sigma_j z_i z_j / 2
///           - sum_i log f~_i(r_i) + sum_i log phi(z_i)`.
///
/// When every shape is zero, `z_i = r_i` and the density terms cancel, so the
/// value reduces to the mean-only correction. Returns the raw value plus a
/// flag marking tail-clamped probabilities.
pub fn correction_skew(
    ga: &GaussianApprox,
    marginals: &[SkewNormalMarginal],
    fixed_idx: &[usize],
    q_j: &DMatrix<f64>,
) -> Result<(f64, bool)> {
    let n_f = fixed_idx.len();
    if marginals.len() != n_f {
        return Err(Error::InvalidArgument(format!(
            "{} marginals supplied for {} fixed effects",
            marginals.len(),
            n_f
        )));
    }
    let mut z = DVector::zeros(n_f);
    let mut sigma = DVector::zeros(n_f);
    let mut log_dens_sum = 0.0;
    let mut clamped = false;
    for (k, &i) in fixed_idx.iter().enumerate() {
        let m = &marginals[k];
        let r = (ga.mode()[i] - m.mean()) / m.sd();
        let mut p = m.std_cdf(r);
        if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
            p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            clamped = true;
        }
        z[k] = norm_quantile(p);
        sigma[k] = ga.marginal_sd()[i];
        log_dens_sum += norm_log_pdf(z[k]) - m.std_logpdf(r);
    }
    let mut quad = 0.0;
    for a in 0..n_f {
        for b in 0..n_f {
            quad += q_j[(a, b)] * sigma[a] * sigma[b] * z[a] * z[b];
        }
    }
    Ok((0.5 * quad + log_dens_sum, clamped))
}

/// Evaluates the configured correction at one hyperparameter point.
pub fn evaluate(
    cfg: &CorrectionConfig,
    ga: &GaussianApprox,
    marginals: &[SkewNormalMarginal],
    fixed_idx: &[usize],
) -> Result<CorrectionResult> {
    if cfg.mode == CorrectionMode::None || fixed_idx.is_empty() {
        return Ok(CorrectionResult::disabled());
    }
    let q_j = fixed_effect_precision(ga, fixed_idx)?;
    let mu_j: Vec<f64> = fixed_idx.iter().map(|&i| ga.mode()[i]).collect();
    let mu_tilde_j: Vec<f64> = marginals.iter().map(|m| m.mean()).collect();
    let n_f = fixed_idx.len();
    let u = n_f as f64 * cfg.xi;

    let (c_raw, tail_clamped) = match cfg.mode {
        CorrectionMode::MeanOnly => (correction_mean_only(&mu_j, &mu_tilde_j, &q_j), false),
        CorrectionMode::MeanAndSkew => correction_skew(ga, marginals, fixed_idx, &q_j)?,
        CorrectionMode::None => unreachable!(),
    };

    // Symmetric split of the quadratic form as per-effect diagnostics.
    let d = DVector::from_iterator(n_f, mu_j.iter().zip(&mu_tilde_j).map(|(a, b)| a - b));
    let qd = &q_j * &d;
    let per_effect: Vec<f64> = (0..n_f).map(|k| 0.5 * d[k] * qd[k]).collect();

    Ok(CorrectionResult {
        c_raw,
        c_thresholded: soft_threshold(c_raw, n_f, cfg.xi),
        u,
        per_effect,
        tail_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::fit_gaussian_approx;
    use crate::model::{FixedEffectPrior, HyperParams, LatentBlockKind, LikelihoodFamily, ModelSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn soft_threshold_reference_points() {
        assert_eq!(soft_threshold(0.0, 4, 10.0), 0.0);
        // C = 1, u = 40.
        let c_t = soft_threshold(1.0, 4, 10.0);
        assert!((c_t - 0.999_791_718_736_827_5).abs() < 1e-12);
        // Asymptote never attained.
        assert!(soft_threshold(1e9, 4, 10.0) < 40.0);
        assert!(soft_threshold(1e9, 4, 10.0) > 39.999_999);
    }

    #[test]
    fn soft_threshold_slope_and_cubic_contact() {
        let (n_f, xi) = (3, 10.0);
        let u = 30.0;
        let h = 1e-6;
        let slope = (soft_threshold(h, n_f, xi) - soft_threshold(-h, n_f, xi)) / (2.0 * h);
        assert!((slope - 1.0).abs() < 1e-6);
        for &c in &[0.5, 2.0, 10.0, 25.0] {
            let gap = (soft_threshold(c, n_f, xi) - c).abs();
            assert!(gap <= c * c * c / (3.0 * u * u) + 1e-12, "c = {c}");
        }
    }

    #[test]
    fn mean_only_reference_arithmetic() {
        // 1-d: Q = (2), d = 0.5 -> C = 0.25.
        let q = DMatrix::from_element(1, 1, 2.0);
        let c = correction_mean_only(&[1.0], &[0.5], &q);
        assert!((c - 0.25).abs() < 1e-15);
        // Zero displacement.
        assert_eq!(correction_mean_only(&[0.3, 0.4], &[0.3, 0.4], &DMatrix::identity(2, 2)), 0.0);
    }

    #[test]
    fn mean_only_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_spd(3, &mut rng);
        let mu = [0.4, -0.2, 0.9];
        let mt = [0.1, 0.3, 0.5];
        let c = correction_mean_only(&mu, &mt, &q);
        // Permute (2, 0, 1).
        let perm = [2usize, 0, 1];
        let qp = DMatrix::from_fn(3, 3, |i, j| q[(perm[i], perm[j])]);
        let mup: Vec<f64> = perm.iter().map(|&k| mu[k]).collect();
        let mtp: Vec<f64> = perm.iter().map(|&k| mt[k]).collect();
        assert!((correction_mean_only(&mup, &mtp, &qp) - c).abs() < 1e-12);
    }

    fn simple_gaussian_ga(n: usize, variances: &[f64]) -> GaussianApprox {
        let spec = ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: n }],
            &[],
            0,
            LikelihoodFamily::GaussianIdentity { precision: 1.0 },
            None,
            vec![],
            variances
                .iter()
                .map(|&v| FixedEffectPrior { mean: 0.0, variance: v })
                .collect(),
        )
        .unwrap();
        fit_gaussian_approx(&spec, &[], &HyperParams::zeros(0), None).unwrap()
    }

    #[test]
    fn fixed_effect_precision_diagonal_and_full_cases() {
        let ga = simple_gaussian_ga(3, &[0.5, 2.0, 4.0]);
        // Diagonal Q: the subset precision is the diagonal restriction.
        let q_j = fixed_effect_precision(&ga, &[0, 2]).unwrap();
        assert!((q_j[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((q_j[(1, 1)] - 0.25).abs() < 1e-10);
        assert!(q_j[(0, 1)].abs() < 1e-12);
        // Full index set returns Q itself.
        let q_all = fixed_effect_precision(&ga, &[0, 1, 2]).unwrap();
        assert!((&q_all - ga.precision()).abs().max() < 1e-10);
    }

    #[test]
    fn fixed_effect_precision_matches_two_inversion_oracle() {
        // Correlated Gaussian approximations built from shared observations.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let n = 4 + (trial % 5);
            let mut triplets = Vec::new();
            let mut y = Vec::new();
            let n_obs = 2 * n;
            for j in 0..n_obs {
                triplets.push((j, j % n, 1.0));
                triplets.push((j, (j + 1) % n, rng.random::<f64>() - 0.5));
                y.push(rng.random::<f64>());
            }
            let spec = ModelSpec::new(
                vec![LatentBlockKind::FixedEffects { count: n }],
                &triplets,
                n_obs,
                LikelihoodFamily::GaussianIdentity { precision: 1.3 },
                None,
                vec![],
                vec![FixedEffectPrior { mean: 0.0, variance: 2.0 }; n],
            )
            .unwrap();
            let ga = fit_gaussian_approx(&spec, &y, &HyperParams::zeros(0), None).unwrap();
            let idx = [0usize, 2];
            let fast = fixed_effect_precision(&ga, &idx).unwrap();
            // Brute force: full inverse, take the submatrix, invert again.
            let full_cov = ga.precision().clone().try_inverse().unwrap();
            let sub = DMatrix::from_fn(2, 2, |a, b| full_cov[(idx[a], idx[b])]);
            let oracle = sub.try_inverse().unwrap();
            assert!((&fast - &oracle).abs().max() < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn skewless_reduction_matches_mean_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = 3;
            let ga = simple_gaussian_ga(n, &[1.0, 0.7, 2.5]);
            let q_j = fixed_effect_precision(&ga, &[0, 1, 2]).unwrap();
            let marginals: Vec<SkewNormalMarginal> = (0..n)
                .map(|i| {
                    SkewNormalMarginal::gaussian(
                        ga.mode()[i] + rng.random::<f64>() - 0.5,
                        ga.marginal_sd()[i],
                    )
                })
                .collect();
            let mu_j: Vec<f64> = (0..n).map(|i| ga.mode()[i]).collect();
            let mu_t: Vec<f64> = marginals.iter().map(|m| m.mean()).collect();
            let c_mean = correction_mean_only(&mu_j, &mu_t, &q_j);
            let (c_skew, clamped) = correction_skew(&ga, &marginals, &[0, 1, 2], &q_j).unwrap();
            assert!(!clamped);
            assert!((c_skew - c_mean).abs() < 1e-8, "{c_skew} vs {c_mean}");
        }
    }

    #[test]
    fn zero_displacement_zero_shape_gives_zero_skew_correction() {
        let ga = simple_gaussian_ga(2, &[1.0, 3.0]);
        let q_j = fixed_effect_precision(&ga, &[0, 1]).unwrap();
        let marginals: Vec<SkewNormalMarginal> = (0..2)
            .map(|i| SkewNormalMarginal::gaussian(ga.mode()[i], ga.marginal_sd()[i]))
            .collect();
        let (c_skew, _) = correction_skew(&ga, &marginals, &[0, 1], &q_j).unwrap();
        assert!(c_skew.abs() < 1e-12);
    }

    #[test]
    fn tail_clamp_flag_fires() {
        let ga = simple_gaussian_ga(1, &[1.0]);
        let q_j = fixed_effect_precision(&ga, &[0]).unwrap();
        // Improved mean 40 sd away pushes F~ to the clamp.
        let marginals = vec![SkewNormalMarginal::gaussian(ga.mode()[0] + 40.0, ga.marginal_sd()[0])];
        let (_, clamped) = correction_skew(&ga, &marginals, &[0], &q_j).unwrap();
        assert!(clamped);
    }

    #[test]
    fn disabled_mode_is_identically_zero() {
        let ga = simple_gaussian_ga(2, &[1.0, 1.0]);
        let marginals: Vec<SkewNormalMarginal> = (0..2)
            .map(|i| SkewNormalMarginal::gaussian(ga.mode()[i] + 1.0, ga.marginal_sd()[i]))
            .collect();
        let cfg = CorrectionConfig::none();
        let res = evaluate(&cfg, &ga, &marginals, &[0, 1]).unwrap();
        assert_eq!(res.c_thresholded, 0.0);
        assert_eq!(res.c_raw, 0.0);
    }

    #[test]
    fn per_effect_contributions_sum_to_raw_mean_only() {
        let ga = simple_gaussian_ga(3, &[0.4, 1.1, 2.2]);
        let marginals: Vec<SkewNormalMarginal> = (0..3)
            .map(|i| SkewNormalMarginal::gaussian(ga.mode()[i] + 0.3 * (i as f64 + 1.0), ga.marginal_sd()[i]))
            .collect();
        let cfg = CorrectionConfig::mean_only();
        let res = evaluate(&cfg, &ga, &marginals, &[0, 1, 2]).unwrap();
        let sum: f64 = res.per_effect.iter().sum();
        assert!((sum - res.c_raw).abs() < 1e-10);
        assert!(res.c_raw >= 0.0);
        assert!(res.c_thresholded < res.u);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// C_t is monotone in C, odd, bounded by u, and sign-preserving.
            #[test]
            fn threshold_properties(c in -500.0..500.0f64, xi in 0.1..50.0f64) {
                let n_f = 4usize;
                let u = n_f as f64 * xi;
                let t = soft_threshold(c, n_f, xi);
                prop_assert!(t.abs() < u);
                prop_assert!(t * c >= 0.0);
                prop_assert!(soft_threshold(c + 0.5, n_f, xi) >= t);
                prop_assert!((soft_threshold(-c, n_f, xi) + t).abs() < 1e-12);
            }

            /// Mean-only correction is nonnegative for SPD Q_J.
            #[test]
            fn mean_only_nonnegative(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = random_spd(3, &mut rng);
                let mu: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                let mt: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                prop_assert!(correction_mean_only(&mu, &mt, &q) >= 0.0);
            }
        }
    }
}
