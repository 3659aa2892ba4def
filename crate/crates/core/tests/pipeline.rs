//! Cross-module integration checks at reduced scale.

use cinla::correction::{CorrectionConfig, CorrectionMode};
use cinla::experiments::templates::{build, TemplateId, TemplateParams};
use cinla::experiments::{run_experiment, ExperimentPlan, PlanKind};
use cinla::mcmc::ChainConfig;
use cinla::model::{simulate_dataset, HyperParams};
use cinla::posterior::{explore, log_posterior_at};

/// The two correction variants track each other closely on a
/// repeated-measures binary fit: the skewness terms add little on top of the
/// mean shift.
#[test]
fn mean_and_skew_corrections_stay_close_on_toenail_like_fit() {
    let params = TemplateParams {
        subjects: Some(60),
        sigma_sq: Some(4.0),
        ..Default::default()
    };
    let built = build(TemplateId::ToenailLike, &params, 3).unwrap();
    let sim = simulate_dataset(&built.sim_spec, &built.truth, 17).unwrap();

    // Evaluate both corrections at the same hyperparameter points, spanning
    // the region the mean-only exploration visits.
    let hp = explore(&built.fit_spec, &sim.y, &CorrectionConfig::mean_only()).unwrap();
    let mut max_c: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for pt in &hp.points {
        let theta = HyperParams::new(vec![pt.theta.get(0)]).unwrap();
        let mean =
            log_posterior_at(&built.fit_spec, &sim.y, &theta, &CorrectionConfig::mean_only())
                .unwrap();
        let skew =
            log_posterior_at(&built.fit_spec, &sim.y, &theta, &CorrectionConfig::mean_and_skew())
                .unwrap();
        max_c = max_c.max(mean.c_t.abs());
        max_gap = max_gap.max((mean.c_t - skew.c_t).abs());
    }
    assert!(max_c > 0.01, "correction unexpectedly inactive: {max_c}");
    assert!(
        max_gap < 0.15 * max_c,
        "corrections diverge: max gap {max_gap:.4} vs 15% of max |C| = {:.4}",
        0.15 * max_c
    );
}

/// Random-slope model: three hyperparameters explore on a capped product
/// grid, the Wishart Gibbs sampler runs, and the whole comparison pipeline
/// holds together.
#[test]
fn model08_three_hyperparameter_pipeline() {
    let plan = ExperimentPlan {
        kind: PlanKind::Replicates,
        template: TemplateId::Model08,
        replicates: 1,
        seed: 88,
        variants: vec![CorrectionMode::None, CorrectionMode::MeanOnly],
        xi: 10.0,
        mcmc: ChainConfig {
            n_iter: 4_000,
            burn_in: 1_000,
            thin: 4,
            n_chains: 1,
            seed: 0,
            adapt_window: 50,
        },
        params: TemplateParams {
            clusters: Some(30),
            ..Default::default()
        },
        sweep: vec![],
    };
    let out = run_experiment(&plan).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    // Every reported parameter has finite summaries for every method.
    for rec in &out.records {
        assert!(rec.stat.mean.is_finite(), "{:?}", rec.stat);
        assert!(rec.stat.sd > 0.0);
        assert!(rec.stat.q025 < rec.stat.q975);
    }
    // The product grid respects the per-axis cap for p = 3 (at most 9 points
    // per axis).
    let built = build(TemplateId::Model08, &plan.params, 1).unwrap();
    let sim = simulate_dataset(&built.sim_spec, &built.truth, 5).unwrap();
    let hp = explore(&built.fit_spec, &sim.y, &CorrectionConfig::none()).unwrap();
    assert!(hp.points.len() <= 9 * 9 * 9);
    for axis in 0..3 {
        let mut steps: Vec<i32> = hp.points.iter().map(|p| p.z_steps[axis]).collect();
        steps.sort_unstable();
        steps.dedup();
        assert!(steps.len() <= 9, "axis {axis} has {} distinct steps", steps.len());
    }
}

/// Misspecified protocol: simulate from the random-slope model, fit the
/// intercept-only one, and never read slope parameters while fitting.
#[test]
fn misspecified_pipeline_runs() {
    let plan = ExperimentPlan {
        kind: PlanKind::Replicates,
        template: TemplateId::Misspecified,
        replicates: 2,
        seed: 21,
        variants: vec![CorrectionMode::MeanOnly],
        xi: 10.0,
        mcmc: ChainConfig {
            n_iter: 3_000,
            burn_in: 800,
            thin: 3,
            n_chains: 1,
            seed: 0,
            adapt_window: 50,
        },
        params: TemplateParams {
            clusters: Some(24),
            n_i: Some(4),
            ..Default::default()
        },
        sweep: vec![],
    };
    let out = run_experiment(&plan).unwrap();
    assert!(out.failures.is_empty());
    // The fit side reports the intercept-only parameterization: exactly one
    // hyperparameter axis.
    assert!(out.records.iter().any(|r| r.stat.name == "sigma2_0"));
    assert!(!out.records.iter().any(|r| r.stat.name == "theta_1"));
    assert_eq!(out.report.replicates, 2);
}
