//! Laplace approximation of the hyperparameter posterior, grid exploration,
//! and numerical integration for hyperparameter and latent marginals.

use crate::correction::{self, CorrectionConfig, CorrectionMode};
use crate::error::{Error, Result};
use crate::gauss::{fit_gaussian_approx, GaussianApprox};
use crate::math::{log_sum_exp, norm_log_pdf};
use crate::model::{log_prior_hyper, HyperParams, ModelSpec};
use crate::skewnorm::{improved_marginal, SkewNormalMarginal};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::io::Write;

/// Step between grid points in standardized coordinates.
const DELTA_Z: f64 = 0.75;
/// Grid extension stops once the log posterior drops this far below the mode.
const DELTA_PI: f64 = 4.5;
/// Cap on grid points per axis when exploring three hyperparameters.
const MAX_AXIS_POINTS_P3: i32 = 4;
/// Hard cap on the total number of grid points.
const MAX_GRID_POINTS: usize = 10_000;
/// Finite-difference step for exploration gradients.
const FD_GRAD_STEP: f64 = 1e-4;
/// Finite-difference step for the Hessian at the mode.
const FD_HESS_STEP: f64 = 1e-2;
/// Resolution of smoothed marginal densities.
const MARGINAL_POINTS: usize = 200;
/// Resolution of latent mixture marginals.
const LATENT_POINTS: usize = 401;

/// Log posterior pieces at one hyperparameter point, up to one shared
/// constant across theta.
#[derive(Debug, Clone, Copy)]
pub struct LogPosteriorParts {
    pub uncorrected: f64,
    pub c_t: f64,
    pub corrected: f64,
}

/// One evaluated hyperparameter point with everything the mixture marginals
/// need later.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub theta: HyperParams,
    pub z_steps: Vec<i32>,
    pub log_unc: f64,
    pub c_t: f64,
    pub log_corr: f64,
    /// Normalized integration weight under the active variant.
    pub weight: f64,
    pub mode: Vec<f64>,
    pub sd: Vec<f64>,
    /// Improved marginals aligned with `spec.fixed_idx()`.
    pub sn: Vec<SkewNormalMarginal>,
}

/// Explored hyperparameter posterior.
#[derive(Debug, Clone)]
pub struct HyperPosterior {
    pub points: Vec<GridPoint>,
    pub mode_theta: HyperParams,
    /// Index of the grid point with maximal active log posterior.
    pub mode_index: usize,
    /// Finite-difference Hessian of the active log posterior at the mode.
    pub hessian: DMatrix<f64>,
    /// log of the integral of exp(log_unc) over the grid (cell volume included).
    pub log_norm_unc: f64,
    /// Same for the corrected surface.
    pub log_norm_corr: f64,
    pub config: CorrectionConfig,
}

/// A univariate posterior marginal on a fine grid.
#[derive(Debug, Clone)]
pub struct PosteriorMarginal {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl PosteriorMarginal {
    /// Normalizes `exp(log_density)` on `grid` by the trapezoid rule and
    /// computes the summaries.
    pub fn from_log_density(grid: Vec<f64>, log_density: &[f64]) -> Self {
        assert_eq!(grid.len(), log_density.len());
        let max = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let density: Vec<f64> = log_density.iter().map(|l| (l - max).exp()).collect();
        Self::from_density(grid, density)
    }

    pub fn from_density(grid: Vec<f64>, mut density: Vec<f64>) -> Self {
        let mass = trapezoid(&grid, &density);
        for d in &mut density {
            *d /= mass;
        }
        let mean = trapezoid_weighted(&grid, &density, |x| x);
        let var = trapezoid_weighted(&grid, &density, |x| (x - mean) * (x - mean));
        let mut m = Self {
            grid,
            density,
            mean,
            sd: var.max(0.0).sqrt(),
            q025: 0.0,
            q50: 0.0,
            q975: 0.0,
        };
        m.q025 = m.quantile(0.025);
        m.q50 = m.quantile(0.5);
        m.q975 = m.quantile(0.975);
        m
    }

    /// Quantile by inverting the trapezoid CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let xs = &self.grid;
        let ds = &self.density;
        let mut acc = 0.0;
        for k in 1..xs.len() {
            let seg = 0.5 * (ds[k - 1] + ds[k]) * (xs[k] - xs[k - 1]);
            if acc + seg >= p {
                let need = p - acc;
                // Linear density over the segment; solve the quadratic CDF.
                let (d0, d1) = (ds[k - 1], ds[k]);
                let w = xs[k] - xs[k - 1];
                let t = if (d1 - d0).abs() < 1e-14 * (d0 + d1 + 1e-300) {
                    if d0 > 0.0 {
                        need / (d0 * w)
                    } else {
                        0.5
                    }
                } else {
                    let a = 0.5 * (d1 - d0) / w;
                    let disc = (d0 * d0 + 4.0 * a * need).max(0.0);
                    ((disc.sqrt() - d0) / (2.0 * a) / w).clamp(0.0, 1.0)
                };
                return xs[k - 1] + t * w;
            }
            acc += seg;
        }
        *xs.last().unwrap()
    }

    /// Trapezoid expectation of `f` under the marginal.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        trapezoid_weighted(&self.grid, &self.density, f)
    }

    /// Writes `(abscissa, density)` rows as CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,density")?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            writeln!(out, "{x},{d}")?;
        }
        Ok(())
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 1..xs.len() {
        acc += 0.5 * (ys[k - 1] + ys[k]) * (xs[k] - xs[k - 1]);
    }
    acc
}

fn trapezoid_weighted(xs: &[f64], dens: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..xs.len() {
        let g0 = dens[k - 1] * f(xs[k - 1]);
        let g1 = dens[k] * f(xs[k]);
        acc += 0.5 * (g0 + g1) * (xs[k] - xs[k - 1]);
    }
    acc
}

/// Full evaluation of the log posterior at one theta, including the fitted
/// artifacts needed for marginals and warm starts.
pub struct Evaluation {
    pub parts: LogPosteriorParts,
    pub ga: GaussianApprox,
    pub sn: Vec<SkewNormalMarginal>,
}

/// Log posterior at `theta`, uncorrected and corrected, up to one shared
/// constant.
pub fn log_posterior_at(
    spec: &ModelSpec,
    y: &[f64],
    theta: &HyperParams,
    cfg: &CorrectionConfig,
) -> Result<LogPosteriorParts> {
    Ok(evaluate_at(spec, y, theta, cfg, None)?.parts)
}

pub(crate) fn evaluate_at(
    spec: &ModelSpec,
    y: &[f64],
    theta: &HyperParams,
    cfg: &CorrectionConfig,
    warm: Option<&DVector<f64>>,
) -> Result<Evaluation> {
    let ga = fit_gaussian_approx(spec, y, theta, warm)?;
    let prior = ga.prior();
    let eta = spec.design().linear_predictor(ga.mode().as_slice());
    let loglik = spec.loglik_sum(&eta, y);
    let log_hyper = log_prior_hyper(spec, theta)?;
    // The n/2 log(2 pi) of the latent prior cancels against the Gaussian
    // approximation's, leaving logdet and quadratic terms.
    let uncorrected = log_hyper + 0.5 * prior.log_det - 0.5 * prior.quad_form(ga.mode()) + loglik
        - 0.5 * ga.log_det();

    // Improved marginals on the fixed effects drive the correction; with the
    // correction disabled they reduce to the Gaussian marginals.
    let sn: Vec<SkewNormalMarginal> = if cfg.mode == CorrectionMode::None {
        spec.fixed_idx()
            .iter()
            .map(|&i| SkewNormalMarginal::gaussian(ga.mode()[i], ga.marginal_sd()[i]))
            .collect()
    } else {
        spec.fixed_idx()
            .iter()
            .map(|&i| improved_marginal(spec, y, &ga, i))
            .collect::<Result<_>>()?
    };

    let corr = correction::evaluate(cfg, &ga, &sn, spec.fixed_idx())?;
    let parts = LogPosteriorParts {
        uncorrected,
        c_t: corr.c_thresholded,
        corrected: uncorrected + corr.c_thresholded,
    };
    Ok(Evaluation { parts, ga, sn })
}

fn active_value(parts: &LogPosteriorParts, cfg: &CorrectionConfig) -> f64 {
    if cfg.mode == CorrectionMode::None {
        parts.uncorrected
    } else {
        parts.corrected
    }
}

/// Explores the hyperparameter posterior: mode search, finite-difference
/// Hessian, standardized axis-aligned grid walk, and weight normalization.
///
/// When a correction is enabled the corrected surface is both maximized and
/// explored, so the grid follows the mass the correction moves.
pub fn explore(spec: &ModelSpec, y: &[f64], cfg: &CorrectionConfig) -> Result<HyperPosterior> {
    spec.validate_observations(y)?;
    let p = spec.n_hyper();

    if p == 0 {
        let theta = HyperParams::zeros(0);
        let eval = evaluate_at(spec, y, &theta, cfg, None)?;
        let point = grid_point(theta.clone(), vec![], &eval, 1.0);
        return Ok(HyperPosterior {
            mode_theta: theta,
            mode_index: 0,
            hessian: DMatrix::zeros(0, 0),
            log_norm_unc: eval.parts.uncorrected,
            log_norm_corr: eval.parts.corrected,
            points: vec![point],
            config: *cfg,
        });
    }
    if p > 3 {
        return Err(Error::Exploration(format!(
            "grid exploration supports up to 3 hyperparameters, model has {p}"
        )));
    }

    // Quasi-Newton (BFGS) maximization with finite-difference gradients.
    let mut warm: Option<DVector<f64>> = None;
    let mut objective = |t: &[f64], warm: &mut Option<DVector<f64>>| -> Result<f64> {
        let theta = HyperParams::new(t.to_vec())
            .map_err(|e| Error::Exploration(format!("mode search left finite range: {e}")))?;
        let eval = evaluate_at(spec, y, &theta, cfg, warm.as_ref())?;
        *warm = Some(eval.ga.mode().clone());
        Ok(active_value(&eval.parts, cfg))
    };

    // BFGS minimization of the negated log posterior.
    let mut t = vec![0.0; p];
    let mut f = -objective(&t, &mut warm)?;
    let mut grad = fd_gradient(&mut objective, &t, &mut warm)?;
    for g in &mut grad {
        *g = -*g;
    }
    let mut h_inv = DMatrix::identity(p, p);
    let mut stalled = false;
    for _iter in 0..100 {
        let g = DVector::from_column_slice(&grad);
        if g.amax() < 1e-5 {
            break;
        }
        let mut dir: DVector<f64> = &h_inv * (-&g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(p, p);
            dir = -g.clone();
        }
        let slope = g.dot(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = t
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + step * d)
                .collect();
            match objective(&cand, &mut warm) {
                Ok(v) => {
                    let fc = -v;
                    if fc <= f + 1e-4 * step * slope {
                        let s: Vec<f64> = cand.iter().zip(&t).map(|(a, b)| a - b).collect();
                        t = cand;
                        let mut new_grad = fd_gradient(&mut objective, &t, &mut warm)?;
                        for gk in &mut new_grad {
                            *gk = -*gk;
                        }
                        let s_v = DVector::from_column_slice(&s);
                        let y_v =
                            DVector::from_iterator(p, new_grad.iter().zip(&grad).map(|(a, b)| a - b));
                        let sy = s_v.dot(&y_v);
                        if sy > 1e-12 {
                            let rho = 1.0 / sy;
                            let i = DMatrix::identity(p, p);
                            let left = &i - rho * &s_v * y_v.transpose();
                            let right = &i - rho * &y_v * s_v.transpose();
                            h_inv = &left * &h_inv * &right + rho * &s_v * s_v.transpose();
                        }
                        grad = new_grad;
                        accepted = (fc - f).abs() > 1e-11 * (1.0 + f.abs());
                        f = fc;
                        break;
                    }
                    step *= 0.5;
                }
                Err(_) => step *= 0.5,
            }
        }
        if !accepted {
            stalled = true;
            break;
        }
    }
    if stalled && DVector::from_column_slice(&grad).amax() > 0.1 {
        return Err(Error::Exploration(format!(
            "mode search stalled with |grad| = {:.3e} at theta = {t:?}",
            DVector::from_column_slice(&grad).amax()
        )));
    }

    let theta_star = HyperParams::new(t.clone()).map_err(|e| Error::Exploration(e.to_string()))?;

    // Finite-difference Hessian of the active surface at the mode.
    let mut hessian = DMatrix::zeros(p, p);
    let f0 = -f; // back to the maximized surface's value
    for a in 0..p {
        for b in a..p {
            let h_a = FD_HESS_STEP * (1.0 + t[a].abs());
            let h_b = FD_HESS_STEP * (1.0 + t[b].abs());
            let v = if a == b {
                let mut tp = t.clone();
                tp[a] += h_a;
                let mut tm = t.clone();
                tm[a] -= h_a;
                (objective(&tp, &mut warm)? - 2.0 * f0 + objective(&tm, &mut warm)?) / (h_a * h_a)
            } else {
                let eval2 = |da: f64, db: f64, warm: &mut Option<DVector<f64>>| -> Result<f64> {
                    let mut tt = t.clone();
                    tt[a] += da;
                    tt[b] += db;
                    objective(&tt, warm)
                };
                (eval2(h_a, h_b, &mut warm)? - eval2(h_a, -h_b, &mut warm)?
                    - eval2(-h_a, h_b, &mut warm)?
                    + eval2(-h_a, -h_b, &mut warm)?)
                    / (4.0 * h_a * h_b)
            };
            hessian[(a, b)] = v;
            hessian[(b, a)] = v;
        }
    }

    // Standardize: -H = V diag(lambda) V' with lambda > 0.
    let eig = (-hessian.clone()).symmetric_eigen();
    let mut scales = DMatrix::zeros(p, p);
    for k in 0..p {
        let lambda = eig.eigenvalues[k].max(1e-8);
        for r in 0..p {
            scales[(r, k)] = eig.eigenvectors[(r, k)] / lambda.sqrt();
        }
    }

    // Axis walk, then product grid over the discovered extents.
    let theta_at = |steps: &[i32]| -> Vec<f64> {
        let mut out = t.clone();
        for (k, &s) in steps.iter().enumerate() {
            if s != 0 {
                for r in 0..p {
                    out[r] += scales[(r, k)] * s as f64 * DELTA_Z;
                }
            }
        }
        out
    };

    let mut cache: HashMap<Vec<i32>, Evaluation> = HashMap::new();
    let center = evaluate_at(spec, y, &theta_star, cfg, warm.as_ref())?;
    let f_mode = active_value(&center.parts, cfg);
    cache.insert(vec![0; p], center);

    let axis_cap = if p == 3 { MAX_AXIS_POINTS_P3 } else { i32::MAX };
    let mut lo = vec![0i32; p];
    let mut hi = vec![0i32; p];
    for axis in 0..p {
        for dir in [-1i32, 1] {
            let mut k = 1;
            loop {
                if k > axis_cap {
                    break;
                }
                let mut steps = vec![0i32; p];
                steps[axis] = dir * k;
                let tt = theta_at(&steps);
                let theta = HyperParams::new(tt).map_err(|e| Error::Exploration(e.to_string()))?;
                let eval = evaluate_at(spec, y, &theta, cfg, warm.as_ref())?;
                let drop = f_mode - active_value(&eval.parts, cfg);
                let below = drop > DELTA_PI;
                cache.insert(steps, eval);
                if dir < 0 {
                    lo[axis] = -k;
                } else {
                    hi[axis] = k;
                }
                // Guarantee at least one step per direction so marginals have
                // support, then stop at the threshold.
                if below && k >= 1 {
                    break;
                }
                k += 1;
            }
        }
    }

    let total: usize = (0..p).map(|a| (hi[a] - lo[a] + 1) as usize).product();
    if total > MAX_GRID_POINTS {
        return Err(Error::Exploration(format!(
            "grid of {total} points exceeds the {MAX_GRID_POINTS}-point cap; posterior too diffuse"
        )));
    }

    // Enumerate the product grid in lexicographic step order (deterministic).
    let mut all_steps = vec![vec![0i32; 0]];
    for axis in 0..p {
        let mut next = Vec::with_capacity(all_steps.len() * (hi[axis] - lo[axis] + 1) as usize);
        for base in &all_steps {
            for s in lo[axis]..=hi[axis] {
                let mut v = base.clone();
                v.push(s);
                next.push(v);
            }
        }
        all_steps = next;
    }

    let mut points = Vec::new();
    for steps in all_steps {
        let eval = match cache.remove(&steps) {
            Some(e) => e,
            None => {
                let theta = HyperParams::new(theta_at(&steps))
                    .map_err(|e| Error::Exploration(e.to_string()))?;
                evaluate_at(spec, y, &theta, cfg, warm.as_ref())?
            }
        };
        let keep = f_mode - active_value(&eval.parts, cfg) <= DELTA_PI
            || steps.iter().filter(|&&s| s != 0).count() <= 1;
        if keep {
            points.push(grid_point(
                HyperParams::new(theta_at(&steps)).unwrap(),
                steps,
                &eval,
                0.0,
            ));
        }
    }

    // Normalize weights over the active surface; cell volumes are equal and
    // cancel except in the evidence-style constants.
    let log_cell = p as f64 * DELTA_Z.ln()
        + (0..p)
            .map(|k| -0.5 * eig.eigenvalues[k].max(1e-8).ln())
            .sum::<f64>();
    let unc: Vec<f64> = points.iter().map(|pt| pt.log_unc).collect();
    let cor: Vec<f64> = points.iter().map(|pt| pt.log_corr).collect();
    let log_norm_unc = log_sum_exp(&unc) + log_cell;
    let log_norm_corr = log_sum_exp(&cor) + log_cell;
    let active: Vec<f64> = if cfg.mode == CorrectionMode::None {
        unc
    } else {
        cor
    };
    let lse = log_sum_exp(&active);
    let mut mode_index = 0;
    for (k, pt) in points.iter_mut().enumerate() {
        pt.weight = (active[k] - lse).exp();
        if active[k] > active[mode_index] {
            mode_index = k;
        }
    }

    Ok(HyperPosterior {
        points,
        mode_theta: theta_star,
        mode_index,
        hessian,
        log_norm_unc,
        log_norm_corr,
        config: *cfg,
    })
}

fn grid_point(theta: HyperParams, z_steps: Vec<i32>, eval: &Evaluation, weight: f64) -> GridPoint {
    GridPoint {
        theta,
        z_steps,
        log_unc: eval.parts.uncorrected,
        c_t: eval.parts.c_t,
        log_corr: eval.parts.corrected,
        weight,
        mode: eval.ga.mode().iter().cloned().collect(),
        sd: eval.ga.marginal_sd().iter().cloned().collect(),
        sn: eval.sn.clone(),
    }
}

fn fd_gradient(
    objective: &mut impl FnMut(&[f64], &mut Option<DVector<f64>>) -> Result<f64>,
    t: &[f64],
    warm: &mut Option<DVector<f64>>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; t.len()];
    for k in 0..t.len() {
        let mut tp = t.to_vec();
        tp[k] += FD_GRAD_STEP;
        let mut tm = t.to_vec();
        tm[k] -= FD_GRAD_STEP;
        grad[k] = (objective(&tp, warm)? - objective(&tm, warm)?) / (2.0 * FD_GRAD_STEP);
    }
    Ok(grad)
}

/// Re-normalizes point weights over the chosen surface; returns the log
/// normalization constant (without the cell-volume term).
pub fn normalize_weights(points: &mut [GridPoint], use_corrected: bool) -> f64 {
    let vals: Vec<f64> = points
        .iter()
        .map(|p| if use_corrected { p.log_corr } else { p.log_unc })
        .collect();
    let lse = log_sum_exp(&vals);
    for (p, v) in points.iter_mut().zip(&vals) {
        p.weight = (v - lse).exp();
    }
    lse
}

/// Marginal posterior of hyperparameter axis `j`: grid masses binned over the
/// other axes, log-quadratic interpolation around the marginal mode, and
/// normalization on a 200-point grid.
pub fn hyper_marginal(hp: &HyperPosterior, j: usize) -> Result<PosteriorMarginal> {
    let p = hp.points.first().map(|pt| pt.theta.len()).unwrap_or(0);
    if j >= p {
        return Err(Error::InvalidArgument(format!(
            "axis {j} out of range for p = {p}"
        )));
    }

    // Collect (theta_j, weight) support points.
    let mut support: Vec<(f64, f64)> = hp
        .points
        .iter()
        .map(|pt| (pt.theta.get(j), pt.weight))
        .collect();
    support.sort_by(|a, b| a.0.total_cmp(&b.0));

    let vmin = support.first().unwrap().0;
    let vmax = support.last().unwrap().0;

    // Bin the masses; weighted bin centers remove most of the binning bias.
    let has_cross_axes = p > 1;
    let (centers, masses) = if !has_cross_axes {
        let c: Vec<f64> = support.iter().map(|s| s.0).collect();
        let m: Vec<f64> = support.iter().map(|s| s.1).collect();
        (c, m)
    } else {
        let n_bins = 15usize.max(3);
        let width = (vmax - vmin) / n_bins as f64;
        let mut mass = vec![0.0; n_bins];
        let mut loc = vec![0.0; n_bins];
        for &(v, w) in &support {
            let b = (((v - vmin) / width) as usize).min(n_bins - 1);
            mass[b] += w;
            loc[b] += w * v;
        }
        let mut centers = Vec::new();
        let mut masses = Vec::new();
        for b in 0..n_bins {
            if mass[b] > 0.0 {
                centers.push(loc[b] / mass[b]);
                masses.push(mass[b]);
            }
        }
        (centers, masses)
    };

    if centers.len() < 3 {
        // Degenerate support: widen once using the curvature at the mode.
        let sd = marginal_sd_from_hessian(hp, j);
        let mode = hp.mode_theta.get(j);
        let grid: Vec<f64> = (0..MARGINAL_POINTS)
            .map(|k| mode - 4.0 * sd + 8.0 * sd * k as f64 / (MARGINAL_POINTS - 1) as f64)
            .collect();
        let logd: Vec<f64> = grid.iter().map(|&x| -0.5 * ((x - mode) / sd).powi(2)).collect();
        return Ok(PosteriorMarginal::from_log_density(grid, &logd));
    }

    let log_mass: Vec<f64> = masses.iter().map(|m| m.max(1e-300).ln()).collect();
    let grid: Vec<f64> = (0..MARGINAL_POINTS)
        .map(|k| vmin + (vmax - vmin) * k as f64 / (MARGINAL_POINTS - 1) as f64)
        .collect();
    let logd: Vec<f64> = grid
        .iter()
        .map(|&x| quadratic_interp(&centers, &log_mass, x))
        .collect();
    Ok(PosteriorMarginal::from_log_density(grid, &logd))
}

fn marginal_sd_from_hessian(hp: &HyperPosterior, j: usize) -> f64 {
    let p = hp.hessian.nrows();
    if p == 0 {
        return 1.0;
    }
    let cov = (-hp.hessian.clone())
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(p, p));
    cov[(j, j)].abs().max(1e-8).sqrt()
}

/// Local log-quadratic interpolation through the three support points nearest
/// to `x` (sorted input).
fn quadratic_interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert!(n >= 3);
    // Window start: nearest point, clamped so a full 3-point stencil fits.
    let mut idx = match xs.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(i) => i,
        Err(i) => i,
    };
    idx = idx.saturating_sub(1).min(n - 3);
    let (x0, x1, x2) = (xs[idx], xs[idx + 1], xs[idx + 2]);
    let (y0, y1, y2) = (ys[idx], ys[idx + 1], ys[idx + 2]);
    let l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
    y0 * l0 + y1 * l1 + y2 * l2
}

/// Marginal posterior of latent coordinate `i`: the weighted mixture of
/// per-grid-point marginals on a shared abscissa grid. Fixed effects use
/// their skew-normal marginals, everything else the Gaussian approximation.
pub fn latent_marginal(spec: &ModelSpec, hp: &HyperPosterior, i: usize) -> Result<PosteriorMarginal> {
    if i >= spec.n_latent() {
        return Err(Error::InvalidArgument(format!(
            "latent index {i} out of range for n = {}",
            spec.n_latent()
        )));
    }
    let fixed_pos = spec.fixed_idx().iter().position(|&k| k == i);

    // Envelope mu +- 5 sigma across grid points.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for pt in &hp.points {
        let (m, s) = component_moments(pt, i, fixed_pos);
        lo = lo.min(m - 5.0 * s);
        hi = hi.max(m + 5.0 * s);
    }
    let grid: Vec<f64> = (0..LATENT_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (LATENT_POINTS - 1) as f64)
        .collect();

    let mut density = vec![0.0; grid.len()];
    for pt in &hp.points {
        if pt.weight == 0.0 {
            continue;
        }
        match fixed_pos {
            Some(pos) => {
                let sn = &pt.sn[pos];
                for (k, &x) in grid.iter().enumerate() {
                    density[k] += pt.weight * sn.density(x);
                }
            }
            None => {
                let (m, s) = (pt.mode[i], pt.sd[i]);
                for (k, &x) in grid.iter().enumerate() {
                    let z = (x - m) / s;
                    density[k] += pt.weight * norm_log_pdf(z).exp() / s;
                }
            }
        }
    }
    Ok(PosteriorMarginal::from_density(grid, density))
}

fn component_moments(pt: &GridPoint, i: usize, fixed_pos: Option<usize>) -> (f64, f64) {
    match fixed_pos {
        Some(pos) => (pt.sn[pos].mean(), pt.sn[pos].sd()),
        None => (pt.mode[i], pt.sd[i]),
    }
}
