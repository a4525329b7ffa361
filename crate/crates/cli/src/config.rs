use std::path::{Path, PathBuf};

use rrpsr_core::baselines::HqsConfig;
use rrpsr_core::eval::{SuccessCriteria, Sweep};
use rrpsr_core::signal::RadarConfig;
use rrpsr_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command can read from `--config`. Command-line flags take
/// precedence over these values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub radar: RadarConfig,
    /// Defaults to a quarter Rayleigh cell on the radar grid.
    pub criteria: Option<SuccessCriteria>,
    pub hqs: HqsConfig,
    pub train: TrainConfig,
    pub estimator: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub phase_map: PhaseMapSpec,
    pub sweep: Option<Sweep>,
    pub sweep_trials: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseMapSpec {
    pub snr_axis: Vec<f64>,
    pub rho_axis: Vec<f64>,
    pub amp2: f64,
    pub trials: usize,
}

impl Default for PhaseMapSpec {
    fn default() -> Self {
        Self {
            snr_axis: rrpsr_core::eval::axis(0.0, 26.0, 2.0),
            rho_axis: rrpsr_core::eval::axis(0.5, 1.5, 0.1),
            amp2: 1.0,
            trials: 200,
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|(line, column, msg)| {
            CliError::Usage(format!("{}:{line}:{column}: {msg}", path.display()))
        })
    }

    /// `Err((line, column, message))` on malformed or unknown input.
    pub fn parse(text: &str) -> Result<Self, (usize, usize, String)> {
        serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            // serde_json appends " at line L column C"; the position is reported separately.
            let msg = match full.rfind(" at line ") {
                Some(i) => full[..i].to_string(),
                None => full,
            };
            (e.line(), e.column(), msg)
        })
    }

    pub fn criteria(&self) -> SuccessCriteria {
        self.criteria.unwrap_or_else(|| SuccessCriteria::for_grid(&self.radar))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c = CliConfig::parse("{}").unwrap();
        assert_eq!(c, CliConfig::default());
        assert_eq!(c.radar.grid_size(), 1024);
        assert_eq!(c.criteria().tol_bins, 4.0);
    }

    #[test]
    fn unknown_key_reports_position() {
        let (line, column, msg) = CliConfig::parse("{\n  \"radar\": {\"n_samples\": 64,\n    \"bogus\": 1}\n}").unwrap_err();
        assert_eq!(line, 3);
        assert!(column > 4, "{column}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = CliConfig::parse(r#"{"hqs": {"iterations": 20}, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(c.hqs.iterations, 20);
        assert_eq!(c.hqs.rho, 1.0);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 256);
    }

    #[test]
    fn sweep_section() {
        let c = CliConfig::parse(
            r#"{"sweep": {"vary": "snr", "rho_d": 0.8, "amp2": 1.0, "values": [0, 10]}, "sweep_trials": 5}"#,
        )
        .unwrap();
        assert_eq!(c.sweep_trials, Some(5));
        assert_eq!(c.sweep.unwrap().points().len(), 2);
    }
}
