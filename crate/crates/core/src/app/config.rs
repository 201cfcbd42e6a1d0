//! Run configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyConfig;
use crate::detect::BankConfig;
use crate::eval::{GridConfig, PipelineConfig, Scenario};
use crate::motion::GenConfig;
use crate::{Error, Result};

use super::trace::{bundled_test_trace, bundled_train_trace, load_trace};

/// Axes of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub taus: Vec<f64>,
    pub settings: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<Scenario>,
}

impl Default for GridAxes {
    fn default() -> Self {
        let g = GridConfig::default();
        Self { taus: g.taus, settings: g.settings, seeds: g.seeds, scenarios: g.scenarios }
    }
}

/// Every field has a default, so `{}` is a complete configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Lead-speed CSV (`t,v`) for test data; the bundled 200 s trace if absent.
    pub trace: Option<PathBuf>,
    /// Lead-speed CSV for training data; the bundled 400 s trace if absent.
    pub train_trace: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Perception-reaction delay for single runs, seconds.
    pub tau: f64,
    /// Scenario for `run` and `roc`.
    pub scenario: Scenario,
    pub generation: GenConfig,
    pub anomaly: AnomalyConfig,
    pub pipeline: PipelineConfig,
    pub bank: BankConfig,
    pub grid: GridAxes,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trace: None,
            train_trace: None,
            out: PathBuf::from("out"),
            seed: 0,
            tau: 0.0,
            scenario: Scenario::OcsvmIdm,
            generation: GenConfig::default(),
            anomaly: AnomalyConfig::default(),
            pipeline: PipelineConfig::default(),
            bank: BankConfig::default(),
            grid: GridAxes::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.trace, &self.train_trace].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("trace file {} does not exist", p.display())));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("delay must be non-negative, got {}", self.tau)));
        }
        self.grid_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Grid configuration with this run's generation, anomaly, pipeline and
    /// bank sections.
    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            taus: self.grid.taus.clone(),
            settings: self.grid.settings.clone(),
            seeds: self.grid.seeds.clone(),
            scenarios: self.grid.scenarios.clone(),
            generation: self.generation.clone(),
            anomaly: self.anomaly.clone(),
            pipeline: self.pipeline.clone(),
            bank: self.bank.clone(),
        }
    }

    /// Generation settings at this run's delay.
    pub fn generation_at_tau(&self) -> GenConfig {
        GenConfig { tau: self.tau, ..self.generation.clone() }
    }

    pub fn test_trace(&self) -> Result<Vec<f64>> {
        self.trace.as_ref().map_or_else(|| Ok(bundled_test_trace()), load_trace)
    }

    pub fn training_trace(&self) -> Result<Vec<f64>> {
        self.train_trace.as_ref().map_or_else(|| Ok(bundled_train_trace()), load_trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sed": 3}"#), Err(Error::Config(_))));
        assert!(RunConfig::from_json(r#"{"anomaly": {"alpha": 0.02, "L": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"pipeline": {"filter": {"window": 30, "bogus": 1}}}"#).is_err());
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let mut cfg = RunConfig { seed: 17, tau: 0.5, scenario: Scenario::Chi2NoIdm, ..RunConfig::default() };
        cfg.anomaly.alpha = 0.03;
        cfg.generation.noise_var = 0.0123456789;
        cfg.grid.taus = vec![0.0, 1.5];
        cfg.bank.rates = vec![0.02, 0.2];
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_trace_file_is_a_config_error() {
        let cfg = RunConfig { trace: Some(PathBuf::from("/nonexistent/lead.csv")), ..RunConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_numbers_are_config_errors() {
        let cfg = RunConfig::from_json(r#"{"anomaly": {"alpha": 1.5}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::from_json(r#"{"tau": -1}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
