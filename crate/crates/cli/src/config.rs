//! Run settings: JSON config file merged under command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use cascade_core::QualitySpec;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightingArg {
    Posterior,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Every setting a command may read. Fields left `None` fall back to the
/// command's default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub q_lo: Option<f64>,
    pub q_hi: Option<f64>,
    pub mu0: Option<f64>,
    pub history: Option<String>,
    pub cap: Option<usize>,
    pub grid: Option<[f64; 3]>,
    pub seed: Option<u64>,
    pub weighting: Option<WeightingArg>,
    /// Path to a JSON quality spec.
    pub spec: Option<PathBuf>,
    /// Inline quality spec.
    pub quality_spec: Option<QualitySpec>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub length: Option<usize>,
    pub state: Option<u8>,
    pub data: Option<PathBuf>,
    pub synthetic: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Invalid(format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    /// Fields set in `flags` win over `self`.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        RunConfig {
            q_lo: flags.q_lo.or(self.q_lo),
            q_hi: flags.q_hi.or(self.q_hi),
            mu0: flags.mu0.or(self.mu0),
            history: flags.history.or(self.history),
            cap: flags.cap.or(self.cap),
            grid: flags.grid.or(self.grid),
            seed: flags.seed.or(self.seed),
            weighting: flags.weighting.or(self.weighting),
            spec: flags.spec.or(self.spec),
            quality_spec: flags.quality_spec.or(self.quality_spec),
            out: flags.out.or(self.out),
            format: flags.format.or(self.format),
            length: flags.length.or(self.length),
            state: flags.state.or(self.state),
            data: flags.data.or(self.data),
            synthetic: flags.synthetic.or(self.synthetic),
        }
    }

    /// The quality spec from `--spec`, an inline spec, or `--q-lo/--q-hi`.
    pub fn quality(&self) -> Result<QualitySpec, CliError> {
        if let Some(path) = &self.spec {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            return serde_json::from_str(&text).map_err(|e| {
                CliError::Invalid(format!(
                    "{}: line {}, column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            });
        }
        if let Some(q) = &self.quality_spec {
            return Ok(q.clone());
        }
        match (self.q_lo, self.q_hi) {
            (Some(lo), Some(hi)) => Ok(QualitySpec::uniform(lo, hi)),
            _ => Err(CliError::Invalid(
                "need --spec or both --q-lo and --q-hi".into(),
            )),
        }
    }

    pub fn check_probability(name: &str, v: f64) -> Result<f64, CliError> {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(CliError::Invalid(format!("{name} = {v} outside [0, 1]")))
        }
    }
}

/// Parses `start,stop,step`.
pub fn parse_grid(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected start,stop,step, got {s:?}"));
    }
    let mut out = [0.0f64; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
    }
    if out[2].is_nan() || out[2] <= 0.0 {
        return Err("grid step must be positive".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let file = RunConfig {
            q_hi: Some(0.7),
            cap: Some(10),
            ..Default::default()
        };
        let flags = RunConfig {
            q_hi: Some(0.9),
            ..Default::default()
        };
        let m = file.overlay(flags);
        assert_eq!(m.q_hi, Some(0.9));
        assert_eq!(m.cap, Some(10));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.5, 0.8,0.001").unwrap(), [0.5, 0.8, 0.001]);
        assert!(parse_grid("0.5,0.8").is_err());
        assert!(parse_grid("0.5,0.8,0").is_err());
        assert!(parse_grid("a,0.8,0.1").is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"q_hi": 0.8, "bogus": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(
            r#"{"quality_spec": {"kind": "uniform", "q_lo": 0.5, "q_hi": 0.8}, "grid": [0, 1, 0.1]}"#,
        )
        .unwrap();
        assert_eq!(c.quality().unwrap(), QualitySpec::uniform(0.5, 0.8));
    }
}
