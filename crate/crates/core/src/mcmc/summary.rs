//! Posterior sample summaries and convergence diagnostics.

use super::PosteriorSamples;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Per-parameter posterior summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
}

/// Type-7 quantile (the R default) on sorted input.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Effective sample size pooled across chains (Geyer initial positive
/// sequence per chain).
pub fn ess_pooled(chains: &[Vec<f64>]) -> f64 {
    chains.iter().map(|c| ess_single(c)).sum()
}

fn ess_single(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let max_lag = (n - 1).min(2000);
    let auto = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..n - lag {
            acc += centered[k] * centered[k + lag];
        }
        acc / n as f64 / var
    };
    let mut tau = 1.0;
    let mut m = 0;
    loop {
        let l1 = 2 * m + 1;
        let l2 = 2 * m + 2;
        if l2 > max_lag {
            break;
        }
        let gamma = auto(l1) + auto(l2);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    (n as f64 / tau).min(n as f64)
}

/// Split-free Gelman-Rubin statistic across chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    assert!(m >= 2, "need at least two chains");
    let n = chains.iter().map(Vec::len).min().unwrap();
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c[..n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| {
            c[..n].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n as f64 - 1.0)
        })
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return 1.0;
    }
    let v_hat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (v_hat / w).sqrt()
}

/// Summaries of every reported parameter.
pub fn summarize(samples: &PosteriorSamples) -> Vec<ParamSummary> {
    samples
        .params
        .iter()
        .map(|trace| {
            let pooled = trace.pooled();
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let var = pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let mut sorted = pooled;
            sorted.sort_by(|a, b| a.total_cmp(b));
            ParamSummary {
                name: trace.name.clone(),
                mean,
                sd: var.max(0.0).sqrt(),
                q025: quantile_type7(&sorted, 0.025),
                q50: quantile_type7(&sorted, 0.5),
                q975: quantile_type7(&sorted, 0.975),
                ess: ess_pooled(&trace.chains),
            }
        })
        .collect()
}

/// Writes one CSV row per (parameter, chain, sample index).
pub fn write_samples_csv<W: Write>(samples: &PosteriorSamples, mut out: W) -> Result<()> {
    write!(out, "iteration")?;
    for t in &samples.params {
        write!(out, ",{}", t.name)?;
    }
    writeln!(out)?;
    let n_chains = samples.params.first().map(|t| t.chains.len()).unwrap_or(0);
    let mut row = 0usize;
    for chain in 0..n_chains {
        let len = samples.params[0].chains[chain].len();
        for k in 0..len {
            write!(out, "{row}")?;
            for t in &samples.params {
                write!(out, ",{}", t.chains[chain][k])?;
            }
            writeln!(out)?;
            row += 1;
        }
    }
    Ok(())
}

pub fn write_summaries_csv<W: Write>(summaries: &[ParamSummary], mut out: W) -> Result<()> {
    writeln!(out, "name,mean,sd,q025,q50,q975,ess")?;
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.name, s.mean, s.sd, s.q025, s.q50, s.q975, s.ess
        )?;
    }
    Ok(())
}

/// Fixed-width histograms (40 bins) per parameter, one CSV per call.
pub fn write_histograms_csv<W: Write>(samples: &PosteriorSamples, mut out: W) -> Result<()> {
    writeln!(out, "name,bin_lo,bin_hi,count")?;
    for t in &samples.params {
        let pooled = t.pooled();
        if pooled.is_empty() {
            continue;
        }
        let lo = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bins = 40usize;
        let width = ((hi - lo) / bins as f64).max(1e-300);
        let mut counts = vec![0u64; bins];
        for v in &pooled {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let blo = lo + b as f64 * width;
            writeln!(out, "{},{},{},{}", t.name, blo, blo + width, c)?;
        }
    }
    Ok(())
}
