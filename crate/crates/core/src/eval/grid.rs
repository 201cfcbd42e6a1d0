use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{inject, AnomalyConfig};
use crate::detect::{BankConfig, DetectorBank};
use crate::motion::{generate_dataset, GenConfig};
use crate::{Error, Result};

use super::scenario::{run_scenario, training_innovations, PipelineConfig, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub taus: Vec<f64>,
    /// Anomaly settings `c`; every `c_i` of a cell equals its setting.
    pub settings: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<Scenario>,
    /// `tau` is overridden per cell.
    pub generation: GenConfig,
    /// `magnitudes` are overridden per cell.
    pub anomaly: AnomalyConfig,
    pub pipeline: PipelineConfig,
    pub bank: BankConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.0, 0.5, 1.5],
            settings: vec![1.0, 0.1, 0.05],
            seeds: (0..10).collect(),
            scenarios: Scenario::ALL.to_vec(),
            generation: GenConfig::default(),
            anomaly: AnomalyConfig::default(),
            pipeline: PipelineConfig::default(),
            bank: BankConfig::default(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.settings.is_empty() || self.seeds.is_empty() || self.scenarios.is_empty() {
            return Err(Error::invalid("grid needs at least one delay, setting, seed and scenario"));
        }
        if self.taus.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("delays must be non-negative, got {:?}", self.taus)));
        }
        if self.settings.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid(format!("settings must be positive, got {:?}", self.settings)));
        }
        self.generation.validate()?;
        self.anomaly.validate()?;
        self.pipeline.validate()?;
        self.bank.validate()
    }
}

/// Independent stream seeds derived from one user seed (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;
pub const INJECT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub scenario: Scenario,
    pub tau: f64,
    pub c: f64,
    pub seed: u64,
    /// `None` if the test stream had a single class or the run failed.
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub tau: f64,
    pub c: f64,
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// Calibration data of the bank trained for one `(tau, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankInfo {
    pub tau: f64,
    pub seed: u64,
    pub bandwidth: f64,
    pub gammas: Vec<f64>,
    pub training_mean: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub results: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub banks: Vec<BankInfo>,
}

impl GridReport {
    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.results.iter().filter(|r| r.error.is_some())
    }

    pub fn mean(&self, scenario: Scenario, tau: f64, c: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.scenario == scenario && r.tau == tau && r.c == c)
            .map(|r| r.mean_auc)
    }
}

struct JobOutput {
    results: Vec<CellResult>,
    bank: Option<BankInfo>,
}

fn run_job(train: &[f64], test: &[f64], cfg: &GridConfig, tau: f64, seed: u64) -> JobOutput {
    let fail = |msg: String| {
        let mut results = Vec::new();
        for &c in &cfg.settings {
            for &scenario in &cfg.scenarios {
                results.push(CellResult { scenario, tau, c, seed, auc: None, error: Some(msg.clone()) });
            }
        }
        JobOutput { results, bank: None }
    };
    let gen = GenConfig { tau, ..cfg.generation.clone() };
    let bank = if cfg.scenarios.contains(&Scenario::OcsvmIdm) {
        let trained = generate_dataset(train, &gen, derive_seed(seed, TRAIN_STREAM))
            .and_then(|ds| training_innovations(&ds, tau, &cfg.pipeline))
            .and_then(|pts| DetectorBank::train(&pts, &cfg.bank));
        match trained {
            Ok(b) => Some(b),
            Err(e) => return fail(format!("bank training failed: {e}")),
        }
    } else {
        None
    };
    let clean = match generate_dataset(test, &gen, derive_seed(seed, TEST_STREAM)) {
        Ok(d) => d,
        Err(e) => return fail(format!("test generation failed: {e}")),
    };
    let mut results = Vec::new();
    for &c in &cfg.settings {
        let anomaly = AnomalyConfig { magnitudes: [c; 4], ..cfg.anomaly.clone() };
        let corrupted = inject(&clean, &anomaly, derive_seed(seed, INJECT_STREAM)).map(|(d, _)| d);
        for &scenario in &cfg.scenarios {
            let outcome = corrupted
                .as_ref()
                .map_err(|e| Error::invalid(e.to_string()))
                .and_then(|d| run_scenario(scenario, d, tau, &cfg.pipeline, bank.as_ref()))
                .and_then(|run| run.auc());
            let (auc, error) = match outcome {
                Ok(a) => (a, None),
                Err(e) => (None, Some(e.to_string())),
            };
            results.push(CellResult { scenario, tau, c, seed, auc, error });
        }
    }
    let bank = bank.map(|b| BankInfo { tau, seed, bandwidth: b.bandwidth(), gammas: b.gammas.clone(), training_mean: b.training_mean });
    JobOutput { results, bank }
}

/// Runs every `(scenario, tau, c, seed)` cell. All scenarios and settings
/// of a `(tau, seed)` pair share the same clean test stream and the same
/// injection draws; the OCSVM bank is trained once per pair.
pub fn grid_evaluate(train: &[f64], test: &[f64], cfg: &GridConfig) -> Result<GridReport> {
    cfg.validate()?;
    let jobs: Vec<(f64, u64)> = cfg.taus.iter().flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s))).collect();
    let outputs: Vec<JobOutput> = jobs.par_iter().map(|&(tau, seed)| run_job(train, test, cfg, tau, seed)).collect();

    let mut results: Vec<CellResult> = Vec::new();
    let mut banks = Vec::new();
    for o in outputs {
        results.extend(o.results);
        banks.extend(o.bank);
    }
    let pos = |v: &[f64], x: f64| v.iter().position(|&y| y == x).unwrap_or(usize::MAX);
    let key = |r: &CellResult| (r.scenario, pos(&cfg.taus, r.tau), pos(&cfg.settings, r.c), r.seed);
    results.sort_by_key(key);

    let mut summary = Vec::new();
    for &scenario in &cfg.scenarios {
        for &tau in &cfg.taus {
            for &c in &cfg.settings {
                let aucs: Vec<f64> = results
                    .iter()
                    .filter(|r| r.scenario == scenario && r.tau == tau && r.c == c)
                    .filter_map(|r| r.auc)
                    .collect();
                let (mean, std) = mean_std(&aucs);
                summary.push(SummaryRow { scenario, tau, c, runs: aucs.len(), mean_auc: mean, std_auc: std });
            }
        }
    }
    Ok(GridReport { results, summary, banks })
}

/// Mean and sample standard deviation; NaN mean for no data, zero spread
/// for a single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "NA".to_string(), |v| format!("{v:.10}"))
}

/// `scenario,tau,c,seed,auc` (`NA` for undefined or failed cells).
pub fn write_results<W: Write>(report: &GridReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "tau", "c", "seed", "auc"])?;
    for r in &report.results {
        w.write_record([r.scenario.to_string(), r.tau.to_string(), r.c.to_string(), r.seed.to_string(), fmt_auc(r.auc)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(report: &GridReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "tau", "c", "runs", "mean_auc", "std_auc"])?;
    for r in &report.summary {
        w.write_record([
            r.scenario.to_string(),
            r.tau.to_string(),
            r.c.to_string(),
            r.runs.to_string(),
            format!("{:.6}", r.mean_auc),
            format!("{:.6}", r.std_auc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One block per delay: rows are settings, columns scenarios, cells
/// `mean ± std`.
pub fn format_table(report: &GridReport, cfg: &GridConfig) -> String {
    let mut s = String::new();
    for &tau in &cfg.taus {
        let _ = writeln!(s, "AUC, tau = {tau} s");
        let _ = write!(s, "{:>8}", "c");
        for sc in &cfg.scenarios {
            let _ = write!(s, " {:>20}", sc.name());
        }
        s.push('\n');
        for &c in &cfg.settings {
            let _ = write!(s, "{c:>8}");
            for &sc in &cfg.scenarios {
                let row = report.summary.iter().find(|r| r.scenario == sc && r.tau == tau && r.c == c);
                let cell = row.map_or("-".to_string(), |r| format!("{:.4} ± {:.4}", r.mean_auc, r.std_auc));
                let _ = write!(s, " {cell:>20}");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}
