//! Model configuration files and observation loading.
//!
//! Models load from JSON with the schema below; observations load from CSV
//! with a header row. The generic layout has a `y` column (plus an optional
//! `trials` column for binomial data); repeated-measures clinical data in the
//! `id,visit,time,treatment,outcome` layout is supported separately.
//!
//! ```json
//! {
//!   "blocks": [
//!     {"kind": "fixed_effects", "count": 4},
//!     {"kind": "iid_normal", "clusters": 100, "precision_hyper": 0}
//!   ],
//!   "fixed_priors": [{"mean": 0.0, "variance": 1000.0}, ...],
//!   "design": [[0, 0, 1.0], [0, 1, -3.0], ...],
//!   "n_obs": 700,
//!   "family": {"kind": "bernoulli_logit"},
//!   "trials": null,
//!   "hyper_priors": [{"kind": "gamma_on_precision", "shape": 0.5, "rate": 0.0164}]
//! }
//! ```

use super::{FixedEffectPrior, HyperPrior, LatentBlockKind, LikelihoodFamily, ModelSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blocks: Vec<LatentBlockKind>,
    #[serde(default)]
    pub fixed_priors: Vec<FixedEffectPrior>,
    /// Triplets `(observation, latent index, coefficient)`.
    pub design: Vec<(usize, usize, f64)>,
    pub n_obs: usize,
    pub family: LikelihoodFamily,
    #[serde(default)]
    pub trials: Option<Vec<u32>>,
    pub hyper_priors: Vec<HyperPrior>,
}

impl ModelConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("model config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.blocks.clone(),
            &self.design,
            self.n_obs,
            self.family,
            self.trials.clone(),
            self.hyper_priors.clone(),
            self.fixed_priors.clone(),
        )
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        let mut design = Vec::new();
        for obs in 0..spec.n_obs() {
            for &(latent, coef) in spec.design().row(obs) {
                design.push((obs, latent, coef));
            }
        }
        let trials = (0..spec.n_obs())
            .map(|j| spec.trials(j))
            .collect::<Option<Vec<u32>>>();
        Self {
            blocks: spec.blocks().iter().map(|b| b.kind().clone()).collect(),
            fixed_priors: spec.fixed_effect_priors().to_vec(),
            design,
            n_obs: spec.n_obs(),
            family: spec.likelihood(),
            trials,
            hyper_priors: spec.hyper_priors().to_vec(),
        }
    }
}

/// Observations in the generic CSV layout: header row with a `y` column and
/// an optional `trials` column. Returns `(y, trials)`.
pub fn load_observations_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Option<Vec<u32>>)> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let y_col = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::Config("observation csv needs a 'y' column".into()))?;
    let trials_col = headers.iter().position(|h| h.trim() == "trials");
    let mut y = Vec::new();
    let mut trials = Vec::new();
    for record in reader.records() {
        let record = record?;
        let yv: f64 = record
            .get(y_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Config("unparseable y value".into()))?;
        y.push(yv);
        if let Some(tc) = trials_col {
            let tv: u32 = record
                .get(tc)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config("unparseable trials value".into()))?;
            trials.push(tv);
        }
    }
    Ok((y, trials_col.map(|_| trials)))
}

/// One visit in the repeated-measures layout `id,visit,time,treatment,outcome`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToenailRecord {
    pub id: u64,
    pub visit: u32,
    pub time: f64,
    pub treatment: f64,
    pub outcome: f64,
}

/// Loads a repeated-measures binary dataset in the
/// `id,visit,time,treatment,outcome` layout.
pub fn load_toenail_csv(path: impl AsRef<Path>) -> Result<Vec<ToenailRecord>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let expected = ["id", "visit", "time", "treatment", "outcome"];
    let cols: Vec<usize> = expected
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Config(format!("toenail csv missing column '{name}'")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |k: usize| -> Result<f64> {
            record
                .get(cols[k])
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("unparseable '{}' value", expected[k])))
        };
        out.push(ToenailRecord {
            id: field(0)? as u64,
            visit: field(1)? as u32,
            time: field(2)?,
            treatment: field(3)?,
            outcome: field(4)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn model_config_round_trip() {
        let json = r#"{
            "blocks": [
                {"kind": "fixed_effects", "count": 1},
                {"kind": "iid_normal", "clusters": 2, "precision_hyper": 0}
            ],
            "fixed_priors": [{"mean": 0.0, "variance": 1.0}],
            "design": [[0, 0, 1.0], [0, 1, 1.0], [1, 0, 1.0], [1, 2, 1.0]],
            "n_obs": 2,
            "family": {"kind": "bernoulli_logit"},
            "hyper_priors": [{"kind": "gamma_on_precision", "shape": 1.0, "rate": 1.0}]
        }"#;
        let config = ModelConfig::from_json(json).unwrap();
        let spec = config.build().unwrap();
        assert_eq!(spec.n_latent(), 3);
        assert_eq!(spec.n_obs(), 2);
        let back = ModelConfig::from_spec(&spec);
        let spec2 = back.build().unwrap();
        assert_eq!(spec2.n_latent(), spec.n_latent());
        assert_eq!(spec2.fixed_idx(), spec.fixed_idx());
    }

    #[test]
    fn bad_schema_is_a_config_error() {
        let err = ModelConfig::from_json("{\"blocks\": 3}").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn observation_csv_with_trials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "y,trials").unwrap();
        writeln!(f, "1,2").unwrap();
        writeln!(f, "0,2").unwrap();
        drop(f);
        let (y, trials) = load_observations_csv(&path).unwrap();
        assert_eq!(y, vec![1.0, 0.0]);
        assert_eq!(trials, Some(vec![2, 2]));
    }

    #[test]
    fn toenail_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toenail.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "id,visit,time,treatment,outcome").unwrap();
        writeln!(f, "1,1,0.0,1,0").unwrap();
        writeln!(f, "1,2,0.57,1,1").unwrap();
        writeln!(f, "2,1,0.0,0,0").unwrap();
        drop(f);
        let rows = load_toenail_csv(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].id, 1);
        assert!((rows[1].time - 0.57).abs() < 1e-12);
        assert_eq!(rows[2].treatment, 0.0);
    }
}
