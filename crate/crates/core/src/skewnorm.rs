//! Skew-normal utilities and the improved marginal approximations
//! `pi_SN(x_i | theta, y)` for fixed effects.
//!
//! The improved marginal shifts the mean and adds skewness relative to the
//! Gaussian approximation while keeping the variance pinned at
//! `sigma_i^2(theta)`.

use crate::error::{Error, Result};
use crate::gauss::{completion_from_column, log_joint_latent, GaussianApprox};
use crate::math::{norm_cdf, norm_log_pdf, norm_quantile, owens_t};
use crate::model::ModelSpec;

/// Largest standardized skewness handed to the moment match; the skew-normal
/// family attains |skewness| ~ 0.9953, so fits are clamped slightly inside.
pub const SKEWNESS_CLAMP: f64 = 0.99;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

// Evaluation grid for the improved marginal: mu_i + s * sigma_i for
// s in {-4, -3.5, ..., 4}.
const GRID_HALF_STEPS: i32 = 8;
const GRID_STEP: f64 = 0.5;

/// Log density of the canonical skew normal `SN(0, 1, alpha)`:
/// `2 phi(z) Phi(alpha z)`.
pub fn sn_logpdf(z: f64, alpha: f64) -> f64 {
    let tail = norm_cdf(alpha * z).max(f64::MIN_POSITIVE);
    std::f64::consts::LN_2 + norm_log_pdf(z) + tail.ln()
}

/// CDF of the canonical skew normal: `Phi(z) - 2 T(z, alpha)`.
///
/// Thin left tails (positive shape) lose all relative accuracy to
/// cancellation between the two terms; those are recomputed by direct
/// quadrature of the density so quantile inversion stays well conditioned.
pub fn sn_cdf(z: f64, alpha: f64) -> f64 {
    let v = (norm_cdf(z) - 2.0 * owens_t(z, alpha)).clamp(0.0, 1.0);
    if v < 1e-8 && z < 0.0 {
        tail_cdf_quadrature(z, alpha)
    } else {
        v
    }
}

/// Left-tail CDF by adaptive Simpson on the density, relative tolerance.
fn tail_cdf_quadrature(z: f64, alpha: f64) -> f64 {
    let g = |t: f64| 2.0 * norm_log_pdf(t).exp() * norm_cdf(alpha * t);
    let top = g(z);
    if top <= 0.0 {
        return 0.0;
    }
    // The log density falls like -(1 + alpha^2) t^2 / 2; pick the lower limit
    // so the integrand there is ~1e-20 of its value at z.
    let rate = 1.0 + alpha * alpha;
    let lo = -((z * z + 92.0 / rate).sqrt());
    let tol = top * (z - lo) * 1e-13;
    let mut stack = vec![(lo, z, g(lo), g(0.5 * (lo + z)), top, tol, 52u32)];
    let mut total = 0.0;
    while let Some((a, b, fa, fm, fb, tol, depth)) = stack.pop() {
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let m = 0.5 * (a + b);
        let flm = g(0.5 * (a + m));
        let frm = g(0.5 * (m + b));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            total += left + right + delta / 15.0;
        } else {
            stack.push((a, m, fa, flm, fm, 0.5 * tol, depth - 1));
            stack.push((m, b, fm, frm, fb, 0.5 * tol, depth - 1));
        }
    }
    total.clamp(0.0, 1.0)
}

/// Quantile of the canonical skew normal, by safeguarded Newton iteration to
/// `|F(q) - p| < 1e-10`.
pub fn sn_quantile(p: f64, alpha: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile probability must be in (0,1), got {p}"
        )));
    }
    // Solve in the lower tail: near p = 1 the CDF equation is ill-conditioned
    // in absolute terms, while 1 - p is exact and the mirrored problem is
    // relatively well conditioned.
    if p > 0.5 {
        return Ok(-sn_quantile(1.0 - p, -alpha)?);
    }
    // Bracket the root starting from the normal quantile.
    let mut lo = norm_quantile(p) - 1.0;
    let mut hi = norm_quantile(p) + 1.0;
    let mut expand = 1.0;
    while sn_cdf(lo, alpha) > p {
        lo -= expand;
        expand *= 2.0;
    }
    expand = 1.0;
    while sn_cdf(hi, alpha) < p {
        hi += expand;
        expand *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = sn_cdf(q, alpha) - p;
        if f > 0.0 {
            hi = q;
        } else {
            lo = q;
        }
        let dens = sn_logpdf(q, alpha).exp();
        let newton = q - f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - q).abs();
        q = next;
        if f.abs() < 1e-10 && moved < 1e-12 * (1.0 + q.abs()) {
            return Ok(q);
        }
    }
    Ok(q)
}

/// Standardized skewness of `SN(0, 1, alpha)`.
pub fn skewness_from_shape(alpha: f64) -> f64 {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let m1 = delta * SQRT_2_OVER_PI;
    0.5 * (4.0 - std::f64::consts::PI) * m1.powi(3) / (1.0 - m1 * m1).powf(1.5)
}

/// Inverts [`skewness_from_shape`]; the argument is clamped to
/// `|gamma| <= SKEWNESS_CLAMP` first.
pub fn shape_from_skewness(gamma: f64) -> f64 {
    let g = gamma.clamp(-SKEWNESS_CLAMP, SKEWNESS_CLAMP);
    if g == 0.0 {
        return 0.0;
    }
    let t = (2.0 * g / (4.0 - std::f64::consts::PI)).cbrt();
    let m1 = t / (1.0 + t * t).sqrt();
    let delta = m1 / SQRT_2_OVER_PI;
    delta / (1.0 - delta * delta).sqrt()
}

/// Improved marginal of one latent coordinate: skew normal with mean
/// `mu_tilde_i(theta)`, standard deviation fixed at `sigma_i(theta)`, and
/// shape fitted from the grid skewness.
#[derive(Debug, Clone)]
pub struct SkewNormalMarginal {
    improved_mean: f64,
    sd: f64,
    alpha: f64,
    // Canonical-scale mean m1 and standardizing scale s = sqrt(1 - m1^2):
    // if w ~ SN(0,1,alpha) then (w - m1)/s has mean 0 and variance 1.
    m1: f64,
    s: f64,
}

impl SkewNormalMarginal {
    /// Builds the marginal from its three moments; `gamma` is clamped to the
    /// attainable range.
    pub fn from_moments(mean: f64, sd: f64, gamma: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "skew-normal moments need finite mean and positive sd, got ({mean}, {sd})"
            )));
        }
        let alpha = shape_from_skewness(gamma);
        let delta = alpha / (1.0 + alpha * alpha).sqrt();
        let m1 = delta * SQRT_2_OVER_PI;
        let s = (1.0 - m1 * m1).sqrt();
        Ok(Self {
            improved_mean: mean,
            sd,
            alpha,
            m1,
            s,
        })
    }

    /// Gaussian special case (`alpha = 0`).
    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Self {
            improved_mean: mean,
            sd,
            alpha: 0.0,
            m1: 0.0,
            s: 1.0,
        }
    }

    /// Improved mean `mu_tilde_i(theta)`.
    pub fn mean(&self) -> f64 {
        self.improved_mean
    }

    /// Standard deviation, identical to the Gaussian approximation's
    /// `sigma_i(theta)`.
    pub fn sd(&self) -> f64 {
        self.sd
    }

    /// Skew-normal shape.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Location of the underlying location-scale skew normal.
    pub fn location(&self) -> f64 {
        self.improved_mean - self.sd * self.m1 / self.s
    }

    /// Scale of the underlying location-scale skew normal.
    pub fn scale(&self) -> f64 {
        self.sd / self.s
    }

    /// CDF of the standardized variable `(x - mean)/sd`.
    pub fn std_cdf(&self, z: f64) -> f64 {
        sn_cdf(self.m1 + self.s * z, self.alpha)
    }

    /// Log density of the standardized variable.
    pub fn std_logpdf(&self, z: f64) -> f64 {
        self.s.ln() + sn_logpdf(self.m1 + self.s * z, self.alpha)
    }

    /// Quantile of the standardized variable.
    pub fn std_quantile(&self, p: f64) -> Result<f64> {
        Ok((sn_quantile(p, self.alpha)? - self.m1) / self.s)
    }

    /// Density on the original scale.
    pub fn density(&self, x: f64) -> f64 {
        self.std_logpdf((x - self.improved_mean) / self.sd).exp() / self.sd
    }

    /// Log density on the original scale.
    pub fn log_density(&self, x: f64) -> f64 {
        self.std_logpdf((x - self.improved_mean) / self.sd) - self.sd.ln()
    }

    /// Quantile on the original scale.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        Ok(self.improved_mean + self.sd * self.std_quantile(p)?)
    }
}

/// Fits the improved marginal for latent coordinate `i` (a fixed effect).
///
/// The nested Laplace marginal is evaluated on a symmetric 17-point grid
/// `x_i = mu_i + s sigma_i`, `s in {-4, ..., 4}`. At each point the latent
/// vector is completed at the Gaussian conditional mean (no inner
/// re-optimization) and the value is the second Laplace approximation
///
/// `log pi(x*, theta, y) - log |Q_{-i,-i}(x*)| / 2`,
///
/// with the conditional curvature recomputed at the completion point; its
/// variation in `x_i` carries most of the mean shift. Grid moments give the
/// improved mean and skewness; the variance stays pinned at
/// `sigma_i^2(theta)`.
pub fn improved_marginal(
    spec: &ModelSpec,
    y: &[f64],
    ga: &GaussianApprox,
    i: usize,
) -> Result<SkewNormalMarginal> {
    if i >= ga.n() {
        return Err(Error::InvalidArgument(format!(
            "latent index {i} out of range for n = {}",
            ga.n()
        )));
    }
    let mu_i = ga.mode()[i];
    let sd_i = ga.marginal_sd()[i];
    let cov_col = ga.covariance_column(i);

    let n_points = (2 * GRID_HALF_STEPS + 1) as usize;
    let mut xs = Vec::with_capacity(n_points);
    let mut logf = Vec::with_capacity(n_points);
    for step in -GRID_HALF_STEPS..=GRID_HALF_STEPS {
        let x_i = mu_i + step as f64 * GRID_STEP * sd_i;
        let completed = completion_from_column(ga, i, x_i, &cov_col);
        let log_det_cond = conditional_log_det(spec, ga, y, &completed, i)?;
        xs.push(x_i);
        logf.push(log_joint_latent(spec, ga.prior(), &completed, y) - 0.5 * log_det_cond);
    }

    let max = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logf.iter().map(|l| (l - max).exp()).collect();
    let support = dens.iter().filter(|&&d| d > 0.01).count();
    if support < 3 {
        return Err(Error::DegenerateGrid(format!(
            "marginal for coordinate {i} has mass on {support} grid points; sigma_i likely mis-scaled"
        )));
    }

    // Trapezoid moments on the uniform grid (the common step cancels).
    let w = |k: usize| -> f64 {
        if k == 0 || k == n_points - 1 {
            0.5
        } else {
            1.0
        }
    };
    let mass: f64 = dens.iter().enumerate().map(|(k, d)| w(k) * d).sum();
    let mean: f64 = dens
        .iter()
        .enumerate()
        .map(|(k, d)| w(k) * d * xs[k])
        .sum::<f64>()
        / mass;
    let m2: f64 = dens
        .iter()
        .enumerate()
        .map(|(k, d)| w(k) * d * (xs[k] - mean).powi(2))
        .sum::<f64>()
        / mass;
    let m3: f64 = dens
        .iter()
        .enumerate()
        .map(|(k, d)| w(k) * d * (xs[k] - mean).powi(3))
        .sum::<f64>()
        / mass;
    let mut gamma = m3 / m2.powf(1.5);
    // The cube root in the moment inversion amplifies grid round-off; treat
    // skewness below numerical resolution as exactly Gaussian.
    if gamma.abs() < 1e-6 {
        gamma = 0.0;
    }

    SkewNormalMarginal::from_moments(mean, sd_i, gamma)
}

/// `log |Q_{-i,-i}(x)|` with the curvature `Q(x) = Q_prior + A' W(x) A`
/// recomputed at `x`, via the identity `log |Q| + log [Q^-1]_ii`.
fn conditional_log_det(
    spec: &ModelSpec,
    ga: &GaussianApprox,
    y: &[f64],
    x: &nalgebra::DVector<f64>,
    i: usize,
) -> Result<f64> {
    let eta = spec.design().linear_predictor(x.as_slice());
    let mut q = ga.prior().matrix.clone();
    for (j, &e) in eta.iter().enumerate() {
        let w = -spec.loglik_terms_unchecked(j, e, y[j]).d2;
        for &(a, ca) in spec.design().row(j) {
            for &(b, cb) in spec.design().row(j) {
                q[(a, b)] += ca * cb * w;
            }
        }
    }
    let chol = nalgebra::Cholesky::new(q).ok_or_else(|| {
        Error::NotPositiveDefinite("curvature at a marginal grid point".into())
    })?;
    let log_det_full = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut e_i = nalgebra::DVector::zeros(ga.n());
    e_i[i] = 1.0;
    let sigma_ii = chol.solve(&e_i)[i];
    Ok(log_det_full + sigma_ii.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::fit_gaussian_approx;
    use crate::model::{
        FixedEffectPrior, HyperParams, HyperPrior, LatentBlockKind, LikelihoodFamily, ModelSpec,
    };

    #[test]
    fn cdf_reduces_to_normal_at_zero_shape() {
        for &z in &[-2.0, 0.0, 2.0] {
            assert!((sn_cdf(z, 0.0) - norm_cdf(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_at_zero_closed_form() {
        // F(0; alpha) = 1/2 - arctan(alpha)/pi; at alpha = 1 this is 0.25.
        for &a in &[-3.0f64, -1.0, 0.5, 1.0, 7.0] {
            let expect = 0.5 - a.atan() / std::f64::consts::PI;
            assert!((sn_cdf(0.0, a) - expect).abs() < 1e-13, "alpha = {a}");
        }
        assert!((sn_cdf(0.0, 1.0) - 0.25).abs() < 1e-13);
    }

    #[test]
    fn quantile_inverts_cdf() {
        // The round trip through a double-precision probability can only
        // recover z where ulp(p) / density < tol: a probability stored next
        // to 1 cannot encode a thin-tail abscissa any tighter. The CDF-gap
        // contract |F(q) - p| < 1e-10 holds everywhere.
        for &alpha in &[-10.0, -2.0, 0.0, 0.7, 10.0] {
            for k in -10..=10 {
                let z = 0.5 * k as f64;
                let p = sn_cdf(z, alpha);
                if !(p > 1e-13 && p < 1.0 - 1e-13) {
                    continue;
                }
                let q = sn_quantile(p, alpha).unwrap();
                assert!(
                    (sn_cdf(q, alpha) - p).abs() < 1e-10,
                    "cdf gap at alpha = {alpha}, z = {z}"
                );
                let density = sn_logpdf(z, alpha).exp();
                let ulp = if p > 0.5 { f64::EPSILON * 0.5 } else { p * f64::EPSILON };
                if ulp / density < 0.5e-8 {
                    assert!(
                        (q - z).abs() < 1e-8,
                        "alpha = {alpha}, z = {z}, q = {q}"
                    );
                }
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(sn_quantile(0.0, 1.0).is_err());
        assert!(sn_quantile(1.0, 1.0).is_err());
        assert!(sn_quantile(-0.5, 1.0).is_err());
    }

    #[test]
    fn skewness_shape_round_trip() {
        for &g in &[-0.95, -0.3, 0.0, 0.2, 0.9, 0.99] {
            let a = shape_from_skewness(g);
            assert!((skewness_from_shape(a) - g).abs() < 1e-10, "gamma = {g}");
        }
        // Clamping kicks in beyond the attainable range.
        let a = shape_from_skewness(5.0);
        assert!((skewness_from_shape(a) - SKEWNESS_CLAMP).abs() < 1e-10);
    }

    #[test]
    fn moment_fit_reproduces_targets_by_quadrature() {
        let m = SkewNormalMarginal::from_moments(1.3, 0.8, 0.4).unwrap();
        // Numeric moments of the represented density.
        let (lo, hi, n) = (1.3 - 10.0 * 0.8, 1.3 + 10.0 * 0.8, 40_000);
        let h = (hi - lo) / n as f64;
        let mut mass = 0.0;
        let mut mean = 0.0;
        let mut var = 0.0;
        let mut m3 = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let wq = if k == 0 || k == n { 0.5 } else { 1.0 };
            let d = wq * m.density(x);
            mass += d;
            mean += d * x;
        }
        mean /= mass;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let wq = if k == 0 || k == n { 0.5 } else { 1.0 };
            let d = wq * m.density(x);
            var += d * (x - mean).powi(2);
            m3 += d * (x - mean).powi(3);
        }
        var /= mass;
        m3 /= mass;
        assert!((mass * h - 1.0).abs() < 1e-10);
        assert!((mean - 1.3).abs() < 1e-8);
        assert!((var - 0.64).abs() < 1e-8, "variance {var}");
        assert!((m3 / var.powf(1.5) - 0.4).abs() < 1e-8);
    }

    fn gaussian_identity_model() -> (ModelSpec, Vec<f64>) {
        let mut triplets = Vec::new();
        let mut y = Vec::new();
        for j in 0..6 {
            triplets.push((j, 0, 1.0));
            triplets.push((j, 1 + j % 3, 1.0));
            y.push(0.3 * j as f64 - 0.5);
        }
        let spec = ModelSpec::new(
            vec![
                LatentBlockKind::FixedEffects { count: 1 },
                LatentBlockKind::IidNormal { clusters: 3, precision_hyper: 0 },
            ],
            &triplets,
            6,
            LikelihoodFamily::GaussianIdentity { precision: 2.0 },
            None,
            vec![HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 }],
            vec![FixedEffectPrior { mean: 0.0, variance: 10.0 }],
        )
        .unwrap();
        (spec, y)
    }

    #[test]
    fn gaussian_case_is_unshifted_and_symmetric() {
        let (spec, y) = gaussian_identity_model();
        let theta = HyperParams::zeros(1);
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let m = improved_marginal(&spec, &y, &ga, 0).unwrap();
        assert!((m.mean() - ga.mode()[0]).abs() < 1e-8);
        assert!(m.alpha().abs() < 1e-8);
        assert!((m.sd() - ga.marginal_sd()[0]).abs() < 1e-12);
    }

    #[test]
    fn binomial_reflection_negates_shape_and_mirrors_mean() {
        // A symmetric design: flipping y -> m - y negates the likelihood
        // asymmetry, so the improved marginal must mirror about the prior
        // mean and flip its skewness sign.
        let spec = ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: 1 }],
            &[(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0)],
            3,
            LikelihoodFamily::BinomialLogit,
            Some(vec![2, 2, 2]),
            vec![],
            vec![FixedEffectPrior { mean: 0.0, variance: 4.0 }],
        )
        .unwrap();
        let theta = HyperParams::zeros(0);
        let y = vec![2.0, 2.0, 1.0];
        let y_flip: Vec<f64> = y.iter().map(|v| 2.0 - v).collect();
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let gb = fit_gaussian_approx(&spec, &y_flip, &theta, None).unwrap();
        let ma = improved_marginal(&spec, &y, &ga, 0).unwrap();
        let mb = improved_marginal(&spec, &y_flip, &gb, 0).unwrap();
        assert!((ma.mean() + mb.mean()).abs() < 1e-8);
        assert!((ma.alpha() + mb.alpha()).abs() < 1e-6);
    }

    #[test]
    fn bernoulli_fit_shifts_the_mean() {
        // Low-information binary data: the improved mean must move away from
        // the Gaussian mode.
        let n = 30;
        let mut triplets = Vec::new();
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
            LikelihoodFamily::BernoulliLogit,
            None,
            vec![HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 }],
            vec![FixedEffectPrior { mean: 0.0, variance: 1.0 }],
        )
        .unwrap();
        let y: Vec<f64> = (0..n).map(|j| if j % 4 == 0 { 0.0 } else { 1.0 }).collect();
        let theta = HyperParams::zeros(1);
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let m = improved_marginal(&spec, &y, &ga, 0).unwrap();
        assert!(
            (m.mean() - ga.mode()[0]).abs() > 1e-4,
            "expected a visible mean shift, got {}",
            (m.mean() - ga.mode()[0]).abs()
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// sn_cdf is monotone nondecreasing in z.
            #[test]
            fn cdf_monotone(alpha in -10.0..10.0f64, z in -5.0..4.9f64) {
                prop_assert!(sn_cdf(z, alpha) <= sn_cdf(z + 0.1, alpha) + 1e-14);
            }

            /// Total mass is 1 by quadrature.
            #[test]
            fn density_integrates_to_one(alpha in -8.0..8.0f64) {
                let (lo, hi, n) = (-12.0, 12.0, 8000);
                let h = (hi - lo) / n as f64;
                let mut mass = 0.0;
                for k in 0..=n {
                    let z = lo + k as f64 * h;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    mass += w * sn_logpdf(z, alpha).exp();
                }
                prop_assert!((mass * h - 1.0).abs() < 1e-10);
            }
        }
    }
}
