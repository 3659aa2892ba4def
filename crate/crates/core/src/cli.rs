//! Command-line interface: simulate, fit, mcmc, compare, table.

use crate::correction::{CorrectionConfig, CorrectionMode};
use crate::error::{Error, Result};
use crate::experiments::{
    self, report, ExperimentPlan, PlanKind, ReplicateRecord,
};
use crate::mcmc::{self, ChainConfig};
use crate::model::{load_observations_csv, ModelConfig, ModelSpec, SimulatedData};
use crate::posterior::{explore, hyper_marginal, latent_marginal, HyperPosterior};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "cinla",
    version,
    about = "Approximate Bayesian inference for latent Gaussian models with copula-corrected posteriors"
)]
pub struct Cli {
    /// Worker threads for replicates and chains (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorrectionArg {
    None,
    Mean,
    Skew,
}

impl From<CorrectionArg> for CorrectionMode {
    fn from(value: CorrectionArg) -> Self {
        match value {
            CorrectionArg::None => CorrectionMode::None,
            CorrectionArg::Mean => CorrectionMode::MeanOnly,
            CorrectionArg::Skew => CorrectionMode::MeanAndSkew,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate datasets from a plan's template and write them as CSV.
    Simulate(SimulateArgs),
    /// Fit one dataset with the Laplace pipeline and export marginals.
    Fit(FitArgs),
    /// Run the MCMC oracle on one dataset.
    Mcmc(McmcArgs),
    /// Compare two posterior summaries parameter by parameter.
    Compare(CompareArgs),
    /// Run a replicated experiment (or sweep) and aggregate the table,
    /// or re-aggregate stored replicate records.
    Table(TableArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment plan (JSON).
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the plan's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// Model configuration (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Observations CSV (`y` column, optional `trials` column).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    correction: CorrectionArg,
    /// Soft-threshold scale parameter.
    #[arg(long, default_value_t = 10.0)]
    xi: f64,
}

#[derive(Args)]
struct McmcArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    iters: usize,
    #[arg(long, default_value_t = 20_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write per-chain binary checkpoints.
    #[arg(long)]
    checkpoint: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// First posterior summary (JSON, as written by `fit` or `mcmc`).
    #[arg(long = "a")]
    summary_a: PathBuf,
    /// Second posterior summary; the baseline for gaps and ratios.
    #[arg(long = "b")]
    summary_b: PathBuf,
    /// Optional MCMC samples CSV for interval coverage of A over B's draws.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Experiment plan (JSON); runs the experiment or sweep.
    #[arg(long, conflicts_with = "replicates")]
    plan: Option<PathBuf>,
    /// Stored replicate records CSV; re-aggregates without running.
    #[arg(long)]
    replicates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Restricts the fit variants (plan mode only).
    #[arg(long, value_enum)]
    correction: Option<CorrectionArg>,
    #[arg(long)]
    xi: Option<f64>,
}

/// Posterior summary file shared by `fit`, `mcmc`, and `compare`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub method: String,
    pub params: Vec<report::PostStat>,
}

pub fn run(argv: impl IntoIterator<Item = String>) -> Result<()> {
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        // clap prints its own help/version to stdout with exit code 0; other
        // parse failures surface as config errors.
        if e.use_stderr() {
            Error::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string())
        } else {
            e.print().ok();
            std::process::exit(0);
        }
    })?;

    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .ok();
    }

    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Mcmc(args) => cmd_mcmc(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Table(args) => cmd_table(args),
    }
}

fn load_plan(path: &Path, seed: Option<u64>) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::from_file(path)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn write_dataset_csv(path: &Path, spec: &ModelSpec, sim: &SimulatedData) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let has_trials = spec.trials(0).is_some();
    if has_trials {
        writeln!(out, "y,trials")?;
        for (j, y) in sim.y.iter().enumerate() {
            writeln!(out, "{},{}", y, spec.trials(j).unwrap())?;
        }
    } else {
        writeln!(out, "y")?;
        for y in &sim.y {
            writeln!(out, "{y}")?;
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let plan = load_plan(&args.plan, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let built = experiments::templates::build(
        plan.template,
        &plan.params,
        experiments::derive_seed(plan.seed, 1, 0),
    )?;
    // The fit-side model configuration is what downstream commands consume.
    let config = ModelConfig::from_spec(&built.fit_spec);
    std::fs::write(args.out.join("model.json"), config.to_json()?)?;
    for r in 0..plan.replicates {
        let sim = crate::model::simulate_dataset(
            &built.sim_spec,
            &built.truth,
            experiments::derive_seed(plan.seed, 2, r as u64),
        )?;
        write_dataset_csv(&args.out.join(format!("data_r{r}.csv")), &built.sim_spec, &sim)?;
        let mut latents =
            std::io::BufWriter::new(std::fs::File::create(args.out.join(format!("latent_r{r}.csv")))?);
        writeln!(latents, "index,value")?;
        for (i, v) in sim.latent.iter().enumerate() {
            writeln!(latents, "{i},{v}")?;
        }
    }
    experiments::write_manifest(&args.out, &plan, &[])?;
    Ok(())
}

fn load_model_and_data(model: &Path, data: &Path) -> Result<(ModelSpec, Vec<f64>)> {
    let config = ModelConfig::from_file(model)?;
    let spec = config.build()?;
    let (y, trials) = load_observations_csv(data)?;
    // Trial counts come from the model configuration; the data file's column
    // only needs to agree when present.
    if let Some(t) = trials {
        for (j, &tv) in t.iter().enumerate() {
            if spec.trials(j) != Some(tv) {
                return Err(Error::Config(format!(
                    "trials column disagrees with the model at observation {j}"
                )));
            }
        }
    }
    spec.validate_observations(&y)?;
    Ok((spec, y))
}

fn write_runlog(path: &Path, hp: &HyperPosterior) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let p = hp.mode_theta.len();
    for k in 0..p {
        write!(out, "theta_{k},")?;
    }
    writeln!(out, "log_unc,c_t,log_corr,weight")?;
    for pt in &hp.points {
        for k in 0..p {
            write!(out, "{},", pt.theta.get(k))?;
        }
        writeln!(out, "{},{},{},{}", pt.log_unc, pt.c_t, pt.log_corr, pt.weight)?;
    }
    Ok(())
}

fn fit_summary(spec: &ModelSpec, hp: &HyperPosterior, method: &str) -> Result<SummaryFile> {
    let params = report::generic_report_params(spec);
    let stats = params
        .iter()
        .map(|p| report::stat_from_fit(spec, hp, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(SummaryFile {
        method: method.to_string(),
        params: stats,
    })
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (spec, y) = load_model_and_data(&args.model, &args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let mode: CorrectionMode = args.correction.into();
    let cfg = CorrectionConfig::new(mode, args.xi)?;
    let hp = explore(&spec, &y, &cfg)?;
    let label = mode.to_string();

    write_runlog(&args.out.join(format!("runlog_{label}.csv")), &hp)?;
    for k in 0..spec.n_hyper() {
        let marg = hyper_marginal(&hp, k)?;
        marg.write_csv(std::fs::File::create(
            args.out.join(format!("hyper_marginal_{k}_{label}.csv")),
        )?)?;
    }
    for (pos, &i) in spec.fixed_idx().iter().enumerate() {
        let marg = latent_marginal(&spec, &hp, i)?;
        marg.write_csv(std::fs::File::create(
            args.out.join(format!("latent_marginal_beta{pos}_{label}.csv")),
        )?)?;
    }
    let summary = fit_summary(&spec, &hp, &label)?;
    serde_json::to_writer_pretty(
        std::fs::File::create(args.out.join(format!("fit_summary_{label}.json")))?,
        &summary,
    )?;
    Ok(())
}

fn cmd_mcmc(args: McmcArgs) -> Result<()> {
    let (spec, y) = load_model_and_data(&args.model, &args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let cfg = ChainConfig {
        n_iter: args.iters,
        burn_in: args.burn_in,
        thin: args.thin,
        n_chains: args.chains,
        seed: args.seed,
        adapt_window: 50,
    };
    let samples = mcmc::run_mcmc(&spec, &y, &cfg)?;
    let summaries = mcmc::summarize(&samples);
    mcmc::write_summaries_csv(&summaries, std::fs::File::create(args.out.join("summaries.csv"))?)?;
    mcmc::write_samples_csv(&samples, std::fs::File::create(args.out.join("samples.csv"))?)?;
    mcmc::write_histograms_csv(&samples, std::fs::File::create(args.out.join("histograms.csv"))?)?;
    let summary = SummaryFile {
        method: "mcmc".into(),
        params: summaries
            .iter()
            .map(|s| report::PostStat {
                name: s.name.clone(),
                mean: s.mean,
                sd: s.sd,
                q025: s.q025,
                q50: s.q50,
                q975: s.q975,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(
        std::fs::File::create(args.out.join("fit_summary_mcmc.json"))?,
        &summary,
    )?;
    if args.checkpoint {
        for (k, ckpt) in samples.checkpoints.iter().enumerate() {
            mcmc::save_checkpoint(args.out.join(format!("chain_{k}.ckpt")), ckpt)?;
        }
    }
    Ok(())
}

fn read_summary(path: &Path) -> Result<SummaryFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("summary {}: {e}", path.display())))
}

/// Column-wise parse of a samples CSV written by `mcmc`.
fn read_samples_columns(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut cols: Vec<(String, Vec<f64>)> = headers
        .iter()
        .skip(1)
        .map(|h| (h.to_string(), Vec::new()))
        .collect();
    for record in reader.records() {
        let record = record?;
        for (k, slot) in cols.iter_mut().enumerate() {
            let v: f64 = record
                .get(k + 1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config("bad samples value".into()))?;
            slot.1.push(v);
        }
    }
    Ok(cols)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a = read_summary(&args.summary_a)?;
    let b = read_summary(&args.summary_b)?;
    let samples = match &args.samples {
        Some(path) => Some(read_samples_columns(path)?),
        None => None,
    };
    std::fs::create_dir_all(&args.out)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(args.out.join("comparison.csv"))?);
    writeln!(
        out,
        "param,mean_{0},mean_{1},scaled_gap,var_ratio,coverage",
        a.method, b.method
    )?;
    for stat_a in &a.params {
        let Some(stat_b) = b.params.iter().find(|s| s.name == stat_a.name) else {
            continue;
        };
        let gap = if stat_b.sd > 0.0 {
            (stat_a.mean - stat_b.mean) / stat_b.sd
        } else {
            0.0
        };
        let ratio = if stat_b.sd > 0.0 {
            (stat_a.sd * stat_a.sd) / (stat_b.sd * stat_b.sd)
        } else {
            1.0
        };
        let coverage = samples
            .as_ref()
            .and_then(|cols| cols.iter().find(|(name, _)| *name == stat_a.name))
            .map(|(_, values)| {
                let inside = values
                    .iter()
                    .filter(|&&v| v >= stat_a.q025 && v <= stat_a.q975)
                    .count();
                inside as f64 / values.len().max(1) as f64
            });
        let cov = coverage.map(|c| c.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", stat_a.name, stat_a.mean, stat_b.mean, gap, ratio, cov)?;
    }
    Ok(())
}

fn cmd_table(args: TableArgs) -> Result<()> {
    match (&args.plan, &args.replicates) {
        (Some(plan_path), None) => {
            let mut plan = load_plan(plan_path, args.seed)?;
            if let Some(xi) = args.xi {
                plan.xi = xi;
            }
            if let Some(c) = args.correction {
                plan.variants = vec![CorrectionMode::None, c.into()];
                plan.variants.dedup();
            }
            match plan.kind {
                PlanKind::Replicates => {
                    let output = experiments::run_experiment(&plan)?;
                    experiments::write_experiment_outputs(&args.out, &plan, &output)?;
                }
                PlanKind::ToenailSweep => {
                    experiments::toenail_sweep(&plan.sweep.clone(), &plan, Some(&args.out))?;
                    experiments::write_manifest(&args.out, &plan, &[])?;
                }
                PlanKind::PoissonSweep => {
                    experiments::poisson_sweep(&plan.sweep.clone(), &plan, Some(&args.out))?;
                    experiments::write_manifest(&args.out, &plan, &[])?;
                }
            }
            Ok(())
        }
        (None, Some(records_path)) => {
            let records = report::read_records_csv(records_path)?;
            std::fs::create_dir_all(&args.out)?;
            let (names, methods) = names_and_methods(&records);
            let report =
                report::aggregate(&records, &names, &methods, args.seed.unwrap_or(0), 0);
            report::write_report_csv(
                &report,
                std::fs::File::create(args.out.join("report.csv"))?,
            )?;
            serde_json::to_writer_pretty(
                std::fs::File::create(args.out.join("report.json"))?,
                &report,
            )?;
            Ok(())
        }
        _ => Err(Error::Config(
            "table needs exactly one of --plan or --replicates".into(),
        )),
    }
}

/// First-appearance orders of parameters and methods in a record stream,
/// with mcmc forced last.
fn names_and_methods(records: &[ReplicateRecord]) -> (Vec<String>, Vec<String>) {
    let mut names = Vec::new();
    let mut methods = Vec::new();
    for r in records {
        if !names.contains(&r.stat.name) {
            names.push(r.stat.name.clone());
        }
        if r.method != "mcmc" && !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    methods.push("mcmc".into());
    (names, methods)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correction_arg_mapping() {
        assert_eq!(CorrectionMode::from(CorrectionArg::None), CorrectionMode::None);
        assert_eq!(CorrectionMode::from(CorrectionArg::Mean), CorrectionMode::MeanOnly);
        assert_eq!(CorrectionMode::from(CorrectionArg::Skew), CorrectionMode::MeanAndSkew);
    }

    #[test]
    fn table_requires_exactly_one_source() {
        let dir = tempfile::tempdir().unwrap();
        let args = TableArgs {
            plan: None,
            replicates: None,
            out: dir.path().to_path_buf(),
            seed: None,
            correction: None,
            xi: None,
        };
        assert!(cmd_table(args).is_err());
    }
}
