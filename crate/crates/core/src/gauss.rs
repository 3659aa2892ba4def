//! Gaussian approximation of the latent field conditional on the
//! hyperparameters, found by matching mode and curvature.

use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelSpec, PriorPrecision};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const GRAD_TOL: f64 = 1e-8;
const OBJ_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 30;

/// Gaussian approximation at fixed hyperparameters: mode, curvature at the
/// mode, factorization, log-determinant and marginal standard deviations.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    theta: HyperParams,
    mode: DVector<f64>,
    precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    marginal_sd: DVector<f64>,
    prior: PriorPrecision,
    newton_iters: usize,
}

impl GaussianApprox {
    pub fn theta(&self) -> &HyperParams {
        &self.theta
    }

    /// Mode of `pi(x | theta, y)`, which is also the mean of the
    /// approximation.
    pub fn mode(&self) -> &DVector<f64> {
        &self.mode
    }

    /// Curvature matrix `Q(theta) = Q_prior + A' diag(-l'') A` at the mode.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `log |Q(theta)|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Marginal standard deviations `sigma_i(theta)`.
    pub fn marginal_sd(&self) -> &DVector<f64> {
        &self.marginal_sd
    }

    pub fn prior(&self) -> &PriorPrecision {
        &self.prior
    }

    /// Newton steps taken before convergence.
    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }

    pub fn n(&self) -> usize {
        self.mode.len()
    }

    /// Column `i` of the covariance `Q^-1`, by one solve against the
    /// factorization.
    pub fn covariance_column(&self, i: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.n());
        e[i] = 1.0;
        self.chol.solve(&e)
    }
}

/// Marginal variances `sigma_i^2(theta)`: the diagonal of `Q^-1`.
pub fn marginal_variances(ga: &GaussianApprox) -> DVector<f64> {
    ga.marginal_sd.map(|s| s * s)
}

/// Conditional mean `E_G[x_{-i} | x_i]` of the Gaussian approximation, as an
/// (n-1)-vector in latent order with coordinate `i` removed. One linear solve
/// against the existing factorization; no refactorization.
pub fn conditional_mean_given_one(ga: &GaussianApprox, i: usize, x_i: f64) -> DVector<f64> {
    let full = conditional_completion(ga, i, x_i);
    let n = ga.n();
    let mut out = DVector::zeros(n - 1);
    let mut k = 0;
    for j in 0..n {
        if j != i {
            out[k] = full[j];
            k += 1;
        }
    }
    out
}

/// Full latent vector with coordinate `i` pinned at `x_i` and the rest at the
/// conditional mean: `mu + (x_i - mu_i)/Sigma_ii * Sigma e_i`.
pub(crate) fn conditional_completion(ga: &GaussianApprox, i: usize, x_i: f64) -> DVector<f64> {
    let col = ga.covariance_column(i);
    completion_from_column(ga, i, x_i, &col)
}

pub(crate) fn completion_from_column(
    ga: &GaussianApprox,
    i: usize,
    x_i: f64,
    cov_col: &DVector<f64>,
) -> DVector<f64> {
    let scale = (x_i - ga.mode[i]) / cov_col[i];
    let mut out = ga.mode.clone();
    out.axpy(scale, cov_col, 1.0);
    out[i] = x_i;
    out
}

/// `log pi(x, theta, y)` up to the hyperprior and additive constants: latent
/// prior quadratic plus the observation log-likelihood.
pub fn log_joint_latent(spec: &ModelSpec, prior: &PriorPrecision, x: &DVector<f64>, y: &[f64]) -> f64 {
    let eta = spec.design().linear_predictor(x.as_slice());
    -0.5 * prior.quad_form(x) + spec.loglik_sum(&eta, y)
}

/// Fits the Gaussian approximation by damped Newton iteration on
/// `x -> log pi(x | theta, y)`.
pub fn fit_gaussian_approx(
    spec: &ModelSpec,
    y: &[f64],
    theta: &HyperParams,
    warm_start: Option<&DVector<f64>>,
) -> Result<GaussianApprox> {
    spec.check_hyper(theta)?;
    spec.validate_observations(y)?;
    let n = spec.n_latent();
    let prior = crate::model::build_prior_precision(spec, theta)?;

    let mut x = match warm_start {
        Some(w) if w.len() == n => w.clone(),
        _ => prior.mean.clone(),
    };

    let objective = |x: &DVector<f64>| -> f64 { log_joint_latent(spec, &prior, x, y) };

    let mut f_cur = objective(&x);
    let mut iters = 0usize;
    let mut converged = false;

    for _ in 0..MAX_NEWTON_ITERS {
        let eta = spec.design().linear_predictor(x.as_slice());
        let mut grad = -(&prior.matrix * (&x - &prior.mean));
        let mut q = prior.matrix.clone();
        for (j, &e) in eta.iter().enumerate() {
            let t = spec.loglik_terms_unchecked(j, e, y[j]);
            let w = -t.d2;
            for &(a, ca) in spec.design().row(j) {
                grad[a] += ca * t.d1;
                for &(b, cb) in spec.design().row(j) {
                    q[(a, b)] += ca * cb * w;
                }
            }
        }
        let grad_norm = grad.amax();
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }

        let chol = Cholesky::new(q).ok_or_else(|| {
            Error::NotPositiveDefinite(
                "newton curvature matrix lost positive definiteness".into(),
            )
        })?;
        let step = chol.solve(&grad);

        // Step-halving line search on the exact objective.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &x + t * &step;
            let f_cand = objective(&cand);
            if f_cand > f_cur || (f_cand - f_cur).abs() <= OBJ_TOL * (1.0 + f_cur.abs()) {
                let improved = f_cand - f_cur;
                x = cand;
                f_cur = f_cand;
                accepted = true;
                iters += 1;
                if improved.abs() <= OBJ_TOL * (1.0 + f_cur.abs()) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent left at line-search resolution
            break;
        }
        if converged {
            break;
        }
    }

    // Re-derive the curvature at the final iterate.
    let eta = spec.design().linear_predictor(x.as_slice());
    let mut grad = -(&prior.matrix * (&x - &prior.mean));
    let mut q = prior.matrix.clone();
    for (j, &e) in eta.iter().enumerate() {
        let t = spec.loglik_terms_unchecked(j, e, y[j]);
        let w = -t.d2;
        for &(a, ca) in spec.design().row(j) {
            grad[a] += ca * t.d1;
            for &(b, cb) in spec.design().row(j) {
                q[(a, b)] += ca * cb * w;
            }
        }
    }
    let grad_norm = grad.amax();
    if !converged || !grad_norm.is_finite() {
        return Err(Error::NewtonDiverged {
            iterations: iters,
            grad_norm,
            theta: theta.values().to_vec(),
        });
    }

    let chol = Cholesky::new(q.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("curvature at the mode is not positive definite".into())
    })?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let cov = chol.inverse();
    let marginal_sd = DVector::from_iterator(n, (0..n).map(|i| cov[(i, i)].sqrt()));

    Ok(GaussianApprox {
        theta: theta.clone(),
        mode: x,
        precision: q,
        chol,
        log_det,
        marginal_sd,
        prior,
        newton_iters: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        FixedEffectPrior, HyperPrior, LatentBlockKind, LikelihoodFamily, ModelSpec,
    };

    fn gaussian_identity_spec(n: usize, precision: f64) -> ModelSpec {
        // Dense-ish random design over two fixed effects plus per-obs iid effects.
        let mut triplets = Vec::new();
        for j in 0..n {
            triplets.push((j, 0, 1.0));
            triplets.push((j, 1, (j as f64 * 0.77).sin()));
        }
        ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: 2 }],
            &triplets,
            n,
            LikelihoodFamily::GaussianIdentity { precision },
            None,
            vec![],
            vec![
                FixedEffectPrior { mean: 0.3, variance: 2.0 },
                FixedEffectPrior { mean: 0.0, variance: 5.0 },
            ],
        )
        .unwrap()
    }

    fn bernoulli_spec_n3() -> ModelSpec {
        ModelSpec::new(
            vec![
                LatentBlockKind::FixedEffects { count: 1 },
                LatentBlockKind::IidNormal { clusters: 2, precision_hyper: 0 },
            ],
            &[
                (0, 0, 1.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 0, 1.0),
                (2, 1, -1.0),
            ],
            3,
            LikelihoodFamily::BernoulliLogit,
            None,
            vec![HyperPrior::GammaOnPrecision { shape: 1.0, rate: 1.0 }],
            vec![FixedEffectPrior { mean: 0.0, variance: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_likelihood_converges_in_one_step_to_gls() {
        let spec = gaussian_identity_spec(12, 1.5);
        let theta = HyperParams::zeros(0);
        let y: Vec<f64> = (0..12).map(|j| 0.4 + 0.9 * (j as f64 * 0.77).sin()).collect();
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        assert_eq!(ga.newton_iters(), 1);

        // Direct generalized-least-squares solve.
        let prior = crate::model::build_prior_precision(&spec, &theta).unwrap();
        let mut q = prior.matrix.clone();
        let mut rhs = &prior.matrix * &prior.mean;
        for j in 0..12 {
            for &(a, ca) in spec.design().row(j) {
                rhs[a] += 1.5 * ca * y[j];
                for &(b, cb) in spec.design().row(j) {
                    q[(a, b)] += 1.5 * ca * cb;
                }
            }
        }
        let direct = Cholesky::new(q).unwrap().solve(&rhs);
        assert!((ga.mode() - &direct).amax() < 1e-10);

        // Warm starts land on the same optimum.
        let warm = DVector::from_vec(vec![5.0, -3.0]);
        let ga2 = fit_gaussian_approx(&spec, &y, &theta, Some(&warm)).unwrap();
        assert_eq!(ga2.newton_iters(), 1);
        assert!((ga2.mode() - ga.mode()).amax() < 1e-10);
    }

    #[test]
    fn all_positive_outcomes_push_mode_positive() {
        let spec = bernoulli_spec_n3();
        let theta = HyperParams::zeros(1);
        let y = vec![1.0, 1.0, 1.0];
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        assert!(ga.mode()[0] > 0.0, "intercept {}", ga.mode()[0]);
    }

    #[test]
    fn mode_matches_coordinate_ascent_oracle() {
        let spec = bernoulli_spec_n3();
        let theta = HyperParams::zeros(1);
        let y = vec![1.0, 0.0, 1.0];
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();

        // Independent optimizer: cyclic coordinate ascent, each coordinate
        // maximized by safeguarded finite-difference Newton steps.
        let prior = crate::model::build_prior_precision(&spec, &theta).unwrap();
        let f = |x: &DVector<f64>| log_joint_latent(&spec, &prior, x, &y);
        let mut x = DVector::zeros(3);
        let h = 1e-5;
        for _ in 0..2000 {
            let mut moved: f64 = 0.0;
            for i in 0..3 {
                for _ in 0..40 {
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    let (fp, f0, fm) = (f(&xp), f(&x), f(&xm));
                    let d1 = (fp - fm) / (2.0 * h);
                    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
                    if d2 >= 0.0 {
                        break;
                    }
                    let step = (-d1 / d2).clamp(-1.0, 1.0);
                    x[i] += step;
                    moved = moved.max(step.abs());
                    if step.abs() < 1e-11 {
                        break;
                    }
                }
            }
            if moved < 1e-11 {
                break;
            }
        }
        assert!((ga.mode() - &x).amax() < 1e-8, "newton {:?} vs oracle {:?}", ga.mode(), x);
    }

    #[test]
    fn gradient_at_mode_is_small() {
        let spec = bernoulli_spec_n3();
        let theta = HyperParams::new(vec![0.4]).unwrap();
        let y = vec![0.0, 1.0, 1.0];
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let prior = crate::model::build_prior_precision(&spec, &theta).unwrap();
        let eta = spec.design().linear_predictor(ga.mode().as_slice());
        let mut grad = -(&prior.matrix * (ga.mode() - &prior.mean));
        for (j, &e) in eta.iter().enumerate() {
            let t = spec.loglik_terms(j, e, y[j]).unwrap();
            for &(a, ca) in spec.design().row(j) {
                grad[a] += ca * t.d1;
            }
        }
        assert!(grad.amax() < 1e-8);
    }

    #[test]
    fn marginal_variances_diagonal_case() {
        // Diagonal Q = diag(4, 0.25): variances (0.25, 4).
        let spec = ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: 2 }],
            &[],
            0,
            LikelihoodFamily::GaussianIdentity { precision: 1.0 },
            None,
            vec![],
            vec![
                FixedEffectPrior { mean: 0.0, variance: 0.25 },
                FixedEffectPrior { mean: 0.0, variance: 4.0 },
            ],
        )
        .unwrap();
        let ga = fit_gaussian_approx(&spec, &[], &HyperParams::zeros(0), None).unwrap();
        let v = marginal_variances(&ga);
        assert!((v[0] - 0.25).abs() < 1e-12);
        assert!((v[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_variances_match_dense_inverse() {
        let spec = bernoulli_spec_n3();
        let theta = HyperParams::new(vec![-0.6]).unwrap();
        let y = vec![1.0, 0.0, 0.0];
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let cov = ga.precision().clone().try_inverse().unwrap();
        let v = marginal_variances(&ga);
        for i in 0..3 {
            assert!((v[i] - cov[(i, i)]).abs() < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_eigenvalue_sum() {
        let spec = bernoulli_spec_n3();
        let theta = HyperParams::new(vec![0.2]).unwrap();
        let y = vec![1.0, 1.0, 0.0];
        let ga = fit_gaussian_approx(&spec, &y, &theta, None).unwrap();
        let eig = ga.precision().clone().symmetric_eigen();
        let ld: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        assert!((ld - ga.log_det()).abs() < 1e-8);
    }

    #[test]
    fn conditional_mean_reduces_correctly() {
        // Independent components: conditioning changes nothing.
        let spec = ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: 3 }],
            &[],
            0,
            LikelihoodFamily::GaussianIdentity { precision: 1.0 },
            None,
            vec![],
            vec![
                FixedEffectPrior { mean: 0.5, variance: 1.0 },
                FixedEffectPrior { mean: -0.5, variance: 2.0 },
                FixedEffectPrior { mean: 2.0, variance: 0.5 },
            ],
        )
        .unwrap();
        let ga = fit_gaussian_approx(&spec, &[], &HyperParams::zeros(0), None).unwrap();
        let cond = conditional_mean_given_one(&ga, 1, 9.0);
        assert!((cond[0] - 0.5).abs() < 1e-12);
        assert!((cond[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_mean_bivariate_slope() {
        // Correlated pair via a shared observation; compare against the
        // closed-form bivariate slope r * sigma2 / sigma1.
        let spec = ModelSpec::new(
            vec![LatentBlockKind::FixedEffects { count: 2 }],
            &[(0, 0, 1.0), (0, 1, 1.0)],
            1,
            LikelihoodFamily::GaussianIdentity { precision: 2.0 },
            None,
            vec![],
            vec![
                FixedEffectPrior { mean: 0.0, variance: 1.0 },
                FixedEffectPrior { mean: 0.0, variance: 3.0 },
            ],
        )
        .unwrap();
        let y = vec![1.2];
        let ga = fit_gaussian_approx(&spec, &y, &HyperParams::zeros(0), None).unwrap();
        let cov = ga.precision().clone().try_inverse().unwrap();
        let r = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        let slope = r * cov[(1, 1)].sqrt() / cov[(0, 0)].sqrt();
        let dx = 0.7;
        let cond = conditional_mean_given_one(&ga, 0, ga.mode()[0] + dx);
        assert!((cond[0] - (ga.mode()[1] + slope * dx)).abs() < 1e-10);

        // Conditioning at the mean returns the mean.
        let at_mean = conditional_mean_given_one(&ga, 0, ga.mode()[0]);
        assert!((at_mean[0] - ga.mode()[1]).abs() < 1e-12);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let spec = bernoulli_spec_n3();
        let y = vec![1.0, 0.0, 1.0];
        let t0 = HyperParams::new(vec![0.0]).unwrap();
        let t1 = HyperParams::new(vec![0.1]).unwrap();
        let cold = fit_gaussian_approx(&spec, &y, &t1, None).unwrap();
        let neighbor = fit_gaussian_approx(&spec, &y, &t0, None).unwrap();
        let warm = fit_gaussian_approx(&spec, &y, &t1, Some(neighbor.mode())).unwrap();
        assert!((cold.mode() - warm.mode()).amax() < 1e-7);
    }
}
