//! Simulation harness: dataset generation, fits under each correction
//! variant, MCMC gold-standard runs, and table-style comparison reports.

pub mod report;
pub mod sweeps;
pub mod templates;

pub use report::{ComparisonReport, ParamReport, PostStat, ReplicateRecord};
pub use sweeps::{poisson_sweep, toenail_sweep, SweepPoint};
pub use templates::{BuiltTemplate, ReportKind, ReportParam, TemplateId, TemplateParams};

use crate::correction::{CorrectionConfig, CorrectionMode};
use crate::error::{Error, Result};
use crate::mcmc::{run_mcmc, ChainConfig};
use crate::model::simulate_dataset;
use crate::posterior::explore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Seed streams for the independent random purposes of one experiment.
const STREAM_DESIGN: u64 = 1;
const STREAM_SIM: u64 = 2;
const STREAM_MCMC: u64 = 3;

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    crate::mcmc::sampler_seed(base ^ (stream << 56), index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Replicated simulate/fit/sample comparison.
    Replicates,
    /// Random-effects-scale sweep on the repeated-measures template.
    ToenailSweep,
    /// Intercept sweep on the Poisson template.
    PoissonSweep,
}

impl Default for PlanKind {
    fn default() -> Self {
        PlanKind::Replicates
    }
}

/// A full experiment description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub kind: PlanKind,
    pub template: TemplateId,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<CorrectionMode>,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_mcmc")]
    pub mcmc: ChainConfig,
    #[serde(default)]
    pub params: TemplateParams,
    /// Sweep values (sigma for the toenail sweep, beta for the Poisson one).
    #[serde(default)]
    pub sweep: Vec<f64>,
}

fn default_replicates() -> usize {
    1
}
fn default_seed() -> u64 {
    20_240_801
}
fn default_variants() -> Vec<CorrectionMode> {
    vec![CorrectionMode::None, CorrectionMode::MeanOnly]
}
fn default_xi() -> f64 {
    10.0
}
fn default_mcmc() -> ChainConfig {
    ChainConfig {
        n_iter: 100_000,
        burn_in: 20_000,
        thin: 10,
        n_chains: 1,
        seed: 0,
        adapt_window: 50,
    }
}

impl ExperimentPlan {
    pub fn from_json(json: &str) -> Result<Self> {
        let plan: Self =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicate count must be >= 1".into()));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config("xi must be positive".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("need at least one fit variant".into()));
        }
        if self.kind != PlanKind::Replicates && self.sweep.is_empty() {
            return Err(Error::Config("sweep plans need sweep values".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical plan JSON, for the run manifest.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn correction_config(&self, mode: CorrectionMode) -> CorrectionConfig {
        CorrectionConfig { mode, xi: self.xi }
    }
}

/// Result of a replicated experiment run.
pub struct ExperimentOutput {
    pub report: ComparisonReport,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<(usize, String)>,
}

pub fn method_name(mode: CorrectionMode) -> String {
    mode.to_string()
}

/// Runs one replicate: simulate, fit every variant, run MCMC, and compute
/// the per-parameter records.
fn run_replicate(
    built: &BuiltTemplate,
    plan: &ExperimentPlan,
    replicate: usize,
) -> Result<Vec<ReplicateRecord>> {
    let sim_seed = derive_seed(plan.seed, STREAM_SIM, replicate as u64);
    let sim = simulate_dataset(&built.sim_spec, &built.truth, sim_seed)?;

    let mut mcmc_cfg = plan.mcmc;
    mcmc_cfg.seed = derive_seed(plan.seed, STREAM_MCMC, replicate as u64);
    let samples = run_mcmc(&built.fit_spec, &sim.y, &mcmc_cfg)?;
    let mcmc_stats = report::stats_from_mcmc(&samples, &built.report_params)?;

    let mut records = Vec::new();
    for mode in &plan.variants {
        let cfg = plan.correction_config(*mode);
        let hp = explore(&built.fit_spec, &sim.y, &cfg)?;
        for param in &built.report_params {
            let stat = report::stat_from_fit(&built.fit_spec, &hp, param)?;
            let coverage =
                report::coverage_over_samples(&samples, &param.name, stat.q025, stat.q975)?;
            records.push(ReplicateRecord {
                replicate,
                method: method_name(*mode),
                stat,
                coverage: Some(coverage),
            });
        }
    }
    for stat in mcmc_stats {
        records.push(ReplicateRecord {
            replicate,
            method: "mcmc".into(),
            stat,
            coverage: None,
        });
    }
    Ok(records)
}

/// Runs the full replicated experiment. Replicates are independent jobs; the
/// merge is by replicate index, so output is deterministic for a fixed seed
/// regardless of thread count. Replicate-level failures are recorded and
/// excluded; more than 5% failures fails the run.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    plan.validate()?;
    let start = std::time::Instant::now();
    let built = templates::build(
        plan.template,
        &plan.params,
        derive_seed(plan.seed, STREAM_DESIGN, 0),
    )?;

    let results: Vec<(usize, Result<Vec<ReplicateRecord>>)> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| (r, run_replicate(&built, plan, r)))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, result) in results {
        match result {
            Ok(mut recs) => records.append(&mut recs),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() * 20 > plan.replicates {
        return Err(Error::Exploration(format!(
            "{} of {} replicates failed (first: {})",
            failures.len(),
            plan.replicates,
            failures[0].1
        )));
    }

    let names: Vec<String> = built.report_params.iter().map(|p| p.name.clone()).collect();
    let mut methods: Vec<String> = plan.variants.iter().map(|m| method_name(*m)).collect();
    methods.push("mcmc".into());
    let mut report = report::aggregate(&records, &names, &methods, plan.seed, failures.len());
    report.runtime_s = start.elapsed().as_secs_f64();

    Ok(ExperimentOutput {
        report,
        records,
        failures,
    })
}

/// Writes the experiment artifacts: per-replicate records, the aggregated
/// report (CSV + JSON), and a run manifest.
pub fn write_experiment_outputs(
    dir: impl AsRef<Path>,
    plan: &ExperimentPlan,
    output: &ExperimentOutput,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let records = std::fs::File::create(dir.join("replicate_records.csv"))?;
    report::write_records_csv(&output.records, records)?;
    let report_csv = std::fs::File::create(dir.join("report.csv"))?;
    report::write_report_csv(&output.report, report_csv)?;
    serde_json::to_writer_pretty(
        std::fs::File::create(dir.join("report.json"))?,
        &output.report,
    )?;
    write_manifest(dir, plan, &output.failures)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config_hash: String,
    plan: &'a ExperimentPlan,
    failures: &'a [(usize, String)],
}

pub fn write_manifest(
    dir: &Path,
    plan: &ExperimentPlan,
    failures: &[(usize, String)],
) -> Result<()> {
    let manifest = Manifest {
        tool: "cinla",
        version: env!("CARGO_PKG_VERSION"),
        seed: plan.seed,
        config_hash: plan.config_hash(),
        plan,
        failures,
    };
    serde_json::to_writer_pretty(
        std::fs::File::create(dir.join("run_manifest.json"))?,
        &manifest,
    )?;
    Ok(())
}
