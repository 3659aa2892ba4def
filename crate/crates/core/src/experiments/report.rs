//! Comparison metrics and report serialization.

use super::templates::{ReportKind, ReportParam};
use crate::error::{Error, Result};
use crate::mcmc::{summarize, PosteriorSamples};
use crate::posterior::{hyper_marginal, latent_marginal, HyperPosterior, PosteriorMarginal};
use crate::ModelSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Posterior summary of one parameter under one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostStat {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// One (replicate, method, parameter) record; `coverage` is the fraction of
/// MCMC samples inside the method's 95% interval and is absent for the MCMC
/// rows themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: String,
    pub stat: PostStat,
    pub coverage: Option<f64>,
}

/// Aggregated per-parameter comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    /// method -> average posterior mean across replicates.
    pub avg_mean: BTreeMap<String, f64>,
    /// variant -> average of (E(variant) - E(mcmc)) / sd(mcmc).
    pub scaled_gap: BTreeMap<String, f64>,
    /// variant -> average of Var(variant) / Var(mcmc).
    pub var_ratio: BTreeMap<String, f64>,
    /// variant -> average coverage of its 95% interval over MCMC samples.
    pub coverage: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub params: Vec<ParamReport>,
    pub methods: Vec<String>,
    pub replicates: usize,
    pub excluded: usize,
    pub seed: u64,
    /// Wall-clock seconds; informational only and kept out of the CSVs so
    /// re-aggregation stays byte-identical.
    pub runtime_s: f64,
}

impl ComparisonReport {
    pub fn param(&self, name: &str) -> Option<&ParamReport> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Generic report-parameter list for a bare model: every fixed effect, every
/// internal hyperparameter axis, and the variance scales of iid-normal
/// precision slots. Names match the MCMC trace names.
pub fn generic_report_params(spec: &ModelSpec) -> Vec<ReportParam> {
    let mut out = Vec::new();
    for k in 0..spec.n_fixed() {
        out.push(ReportParam {
            name: format!("beta_{k}"),
            kind: ReportKind::LatentFixed(k),
        });
    }
    for k in 0..spec.n_hyper() {
        out.push(ReportParam {
            name: format!("theta_{k}"),
            kind: ReportKind::HyperInternal(k),
        });
    }
    for k in crate::mcmc::iid_precision_slots_of(spec) {
        out.push(ReportParam {
            name: format!("sigma2_{k}"),
            kind: ReportKind::HyperSigma2(k),
        });
        out.push(ReportParam {
            name: format!("sigma_{k}"),
            kind: ReportKind::HyperSigma(k),
        });
    }
    out
}

/// Reads the posterior summary of one report parameter out of a fitted
/// hyperposterior.
pub fn stat_from_fit(
    spec: &ModelSpec,
    hp: &HyperPosterior,
    param: &ReportParam,
) -> Result<PostStat> {
    let stat = match param.kind {
        ReportKind::LatentFixed(pos) => {
            let idx = *spec
                .fixed_idx()
                .get(pos)
                .ok_or_else(|| Error::InvalidArgument(format!("fixed position {pos}")))?;
            let m = latent_marginal(spec, hp, idx)?;
            from_marginal(&param.name, &m)
        }
        ReportKind::HyperInternal(k) => {
            let m = hyper_marginal(hp, k)?;
            from_marginal(&param.name, &m)
        }
        ReportKind::HyperSigma2(k) => {
            let m = hyper_marginal(hp, k)?;
            transformed(&param.name, &m, |t| (-t).exp())
        }
        ReportKind::HyperSigma(k) => {
            let m = hyper_marginal(hp, k)?;
            transformed(&param.name, &m, |t| (-0.5 * t).exp())
        }
    };
    Ok(stat)
}

fn from_marginal(name: &str, m: &PosteriorMarginal) -> PostStat {
    PostStat {
        name: name.to_string(),
        mean: m.mean,
        sd: m.sd,
        q025: m.q025,
        q50: m.q50,
        q975: m.q975,
    }
}

/// Summary of a monotone decreasing transform `f(theta)` of a hyperparameter
/// marginal (quantiles flip order).
fn transformed(name: &str, m: &PosteriorMarginal, f: impl Fn(f64) -> f64) -> PostStat {
    let mean = m.expectation(&f);
    let second = m.expectation(|t| f(t) * f(t));
    PostStat {
        name: name.to_string(),
        mean,
        sd: (second - mean * mean).max(0.0).sqrt(),
        q025: f(m.q975),
        q50: f(m.q50),
        q975: f(m.q025),
    }
}

/// Summaries of the MCMC run restricted to the report parameters.
pub fn stats_from_mcmc(samples: &PosteriorSamples, params: &[ReportParam]) -> Result<Vec<PostStat>> {
    let all = summarize(samples);
    params
        .iter()
        .map(|p| {
            all.iter()
                .find(|s| s.name == p.name)
                .map(|s| PostStat {
                    name: s.name.clone(),
                    mean: s.mean,
                    sd: s.sd,
                    q025: s.q025,
                    q50: s.q50,
                    q975: s.q975,
                })
                .ok_or_else(|| Error::Mcmc(format!("no trace named {}", p.name)))
        })
        .collect()
}

/// Fraction of pooled MCMC samples falling inside `[q025, q975]`.
pub fn coverage_over_samples(samples: &PosteriorSamples, name: &str, q025: f64, q975: f64) -> Result<f64> {
    let trace = samples
        .trace(name)
        .ok_or_else(|| Error::Mcmc(format!("no trace named {name}")))?;
    let pooled = trace.pooled();
    if pooled.is_empty() {
        return Err(Error::Mcmc("empty trace".into()));
    }
    let inside = pooled.iter().filter(|&&v| v >= q025 && v <= q975).count();
    Ok(inside as f64 / pooled.len() as f64)
}

/// Aggregates replicate records into the comparison table. Replicates are
/// processed in ascending index order so the aggregation is deterministic.
pub fn aggregate(
    records: &[ReplicateRecord],
    param_names: &[String],
    methods: &[String],
    seed: u64,
    excluded: usize,
) -> ComparisonReport {
    let mut replicate_ids: Vec<usize> = records.iter().map(|r| r.replicate).collect();
    replicate_ids.sort_unstable();
    replicate_ids.dedup();

    let lookup = |rep: usize, method: &str, name: &str| -> Option<&ReplicateRecord> {
        records.iter().find(|r| {
            r.replicate == rep && r.method == method && r.stat.name == name
        })
    };

    let mut params = Vec::new();
    for name in param_names {
        let mut avg_mean = BTreeMap::new();
        let mut scaled_gap = BTreeMap::new();
        let mut var_ratio = BTreeMap::new();
        let mut coverage = BTreeMap::new();
        for method in methods {
            let mut mean_acc = 0.0;
            let mut gap_acc = 0.0;
            let mut ratio_acc = 0.0;
            let mut cov_acc = 0.0;
            let mut n = 0usize;
            let mut n_cov = 0usize;
            for &rep in &replicate_ids {
                let Some(rec) = lookup(rep, method, name) else { continue };
                n += 1;
                mean_acc += rec.stat.mean;
                if method != "mcmc" {
                    if let Some(mc) = lookup(rep, "mcmc", name) {
                        if mc.stat.sd > 0.0 {
                            gap_acc += (rec.stat.mean - mc.stat.mean) / mc.stat.sd;
                            ratio_acc += (rec.stat.sd * rec.stat.sd) / (mc.stat.sd * mc.stat.sd);
                        }
                    }
                    if let Some(c) = rec.coverage {
                        cov_acc += c;
                        n_cov += 1;
                    }
                }
            }
            if n == 0 {
                continue;
            }
            avg_mean.insert(method.clone(), mean_acc / n as f64);
            if method != "mcmc" {
                scaled_gap.insert(method.clone(), gap_acc / n as f64);
                var_ratio.insert(method.clone(), ratio_acc / n as f64);
                if n_cov > 0 {
                    coverage.insert(method.clone(), cov_acc / n_cov as f64);
                }
            }
        }
        params.push(ParamReport {
            name: name.clone(),
            avg_mean,
            scaled_gap,
            var_ratio,
            coverage,
        });
    }
    ComparisonReport {
        params,
        methods: methods.to_vec(),
        replicates: replicate_ids.len(),
        excluded,
        seed,
        runtime_s: 0.0,
    }
}

pub fn write_records_csv<W: Write>(records: &[ReplicateRecord], mut out: W) -> Result<()> {
    writeln!(out, "replicate,method,param,mean,sd,q025,q50,q975,coverage")?;
    for r in records {
        let cov = r.coverage.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.replicate,
            r.method,
            r.stat.name,
            r.stat.mean,
            r.stat.sd,
            r.stat.q025,
            r.stat.q50,
            r.stat.q975,
            cov
        )?;
    }
    Ok(())
}

pub fn read_records_csv(path: impl AsRef<std::path::Path>) -> Result<Vec<ReplicateRecord>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |k: usize| -> Result<f64> {
            record
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad record field {k}")))
        };
        let coverage = match record.get(8) {
            Some("") | None => None,
            Some(s) => Some(
                s.parse()
                    .map_err(|_| Error::Config("bad coverage value".into()))?,
            ),
        };
        out.push(ReplicateRecord {
            replicate: field(0)? as usize,
            method: record.get(1).unwrap_or_default().to_string(),
            stat: PostStat {
                name: record.get(2).unwrap_or_default().to_string(),
                mean: field(3)?,
                sd: field(4)?,
                q025: field(5)?,
                q50: field(6)?,
                q975: field(7)?,
            },
            coverage,
        });
    }
    Ok(out)
}

pub fn write_report_csv<W: Write>(report: &ComparisonReport, mut out: W) -> Result<()> {
    write!(out, "param")?;
    for m in &report.methods {
        write!(out, ",avg_mean_{m}")?;
    }
    for m in report.methods.iter().filter(|m| *m != "mcmc") {
        write!(out, ",scaled_gap_{m},var_ratio_{m},coverage_{m}")?;
    }
    writeln!(out)?;
    for p in &report.params {
        write!(out, "{}", p.name)?;
        for m in &report.methods {
            match p.avg_mean.get(m) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        for m in report.methods.iter().filter(|m| *m != "mcmc") {
            let g = p.scaled_gap.get(m).map(|v| v.to_string()).unwrap_or_default();
            let r = p.var_ratio.get(m).map(|v| v.to_string()).unwrap_or_default();
            let c = p.coverage.get(m).map(|v| v.to_string()).unwrap_or_default();
            write!(out, ",{g},{r},{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
