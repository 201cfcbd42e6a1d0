//! Multi-model OCSVM bank with γ-threshold switching.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::ocsvm::{median_pairwise_distance, train_ocsvm_many, OcsvmModel, SmoOptions};
use super::InnovationWindow;
use crate::{Error, Result};

pub const BANK_SCHEMA: &str = "cav-detect/bank/v1";

/// How intervals of the windowed average map onto models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrder {
    /// Small averages use the largest `p`, large averages the smallest.
    Descending,
    /// `[0, γ₁)` uses the smallest `p`, `[γ₃, ∞)` the largest.
    #[default]
    Ascending,
}

/// Scale of the score a bank reports for each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `ln(Σ α K / ρ)`; ranks points far outside the support by distance
    /// instead of collapsing them onto `-ρ`.
    #[default]
    Log,
    /// `Σ α K - ρ`.
    Linear,
}

/// Which normalized innovations feed the selection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageSource {
    #[default]
    Raw,
    /// Training mean subtracted first.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the training set.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    /// Outlier rates, strictly increasing.
    pub rates: Vec<f64>,
    /// Selection window length in epochs.
    pub window: usize,
    pub bandwidth: Bandwidth,
    pub order: SelectionOrder,
    pub average: AverageSource,
    pub score: ScoreScale,
    pub smo: SmoOptions,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.01, 0.05, 0.1, 0.2],
            window: 10,
            bandwidth: Bandwidth::Median,
            order: SelectionOrder::Ascending,
            average: AverageSource::Raw,
            score: ScoreScale::Log,
            smo: SmoOptions::default(),
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rates.len() < 2 {
            return Err(Error::invalid("detector bank needs at least two rates"));
        }
        if self.rates.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(format!("rates must lie in (0, 1): {:?}", self.rates)));
        }
        if self.rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("rates must be strictly increasing: {:?}", self.rates)));
        }
        if self.window == 0 {
            return Err(Error::invalid("selection window must be at least 1"));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
            }
        }
        if !(self.smo.tolerance > 0.0) || self.smo.max_iterations == 0 {
            return Err(Error::invalid("SMO tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// Threshold with a fraction `mass` of `values` at or above it: the midpoint
/// between the largest value left below and the smallest value kept above.
pub fn tail_threshold(values: &[f64], mass: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("need at least two values for a tail threshold"));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::invalid(format!("tail mass must lie in (0, 1), got {mass}")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let above = ((mass * n as f64).round() as usize).clamp(1, n - 1);
    Ok(0.5 * (v[n - above - 1] + v[n - above]))
}

/// γ thresholds on `|ν̄|₁` for a bank with the given (increasing) rates.
///
/// The tail mass above `γ_i` is a model rate, taken in decreasing order:
/// `γ₁` uses the second largest rate and the last threshold the smallest,
/// so the thresholds increase for either selection order.
pub fn calibrate_gammas(l1_norms: &[f64], rates: &[f64]) -> Result<Vec<f64>> {
    if rates.len() < 2 || rates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("rates must be strictly increasing: {rates:?}")));
    }
    let mut distinct = l1_norms.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.len() < rates.len() {
        return Err(Error::Detector(format!(
            "{} distinct training values cannot separate {} thresholds",
            distinct.len(),
            rates.len() - 1
        )));
    }
    let gammas = rates[..rates.len() - 1]
        .iter()
        .rev()
        .map(|&mass| tail_threshold(l1_norms, mass))
        .collect::<Result<Vec<f64>>>()?;
    if gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Detector(format!("calibrated thresholds are not strictly increasing: {gammas:?}")));
    }
    Ok(gammas)
}

/// Index (into models sorted by increasing rate) selected for a windowed
/// average. Intervals are `[0, γ₁), [γ₁, γ₂), …, [γ_last, ∞)`.
pub fn select_model(gammas: &[f64], order: SelectionOrder, average: f64) -> usize {
    let interval = gammas.iter().take_while(|&&g| average >= g).count();
    match order {
        SelectionOrder::Descending => gammas.len() - interval,
        SelectionOrder::Ascending => interval,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorBank {
    /// Models sorted by increasing rate.
    pub models: Vec<OcsvmModel>,
    pub gammas: Vec<f64>,
    pub window: usize,
    pub order: SelectionOrder,
    pub average: AverageSource,
    pub score: ScoreScale,
    /// Mean of the training normalized innovations.
    pub training_mean: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct BankDocument {
    schema: String,
    #[serde(flatten)]
    bank: DetectorBank,
}

impl DetectorBank {
    /// Trains one model per rate on clean normalized innovations and
    /// calibrates the switching thresholds on the same data.
    pub fn train(points: &[Vector2<f64>], cfg: &BankConfig) -> Result<Self> {
        cfg.validate()?;
        let bandwidth = match cfg.bandwidth {
            Bandwidth::Median => median_pairwise_distance(points)?,
            Bandwidth::Fixed(h) => h,
        };
        let models = train_ocsvm_many(points, &cfg.rates, bandwidth, &cfg.smo)?;
        let mean = Vector2::from(models[0].mean_offset);
        let norms: Vec<f64> = points
            .iter()
            .map(|p| match cfg.average {
                AverageSource::Raw => p.abs().sum(),
                AverageSource::Centered => (p - mean).abs().sum(),
            })
            .collect();
        let gammas = calibrate_gammas(&norms, &cfg.rates)?;
        Ok(Self {
            models,
            gammas,
            window: cfg.window,
            order: cfg.order,
            average: cfg.average,
            score: cfg.score,
            training_mean: [mean[0], mean[1]],
        })
    }

    pub fn rates(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.rate).collect()
    }

    pub fn bandwidth(&self) -> f64 {
        self.models[0].bandwidth
    }

    pub fn select(&self, average: f64, gamma_scale: f64) -> &OcsvmModel {
        let scaled: Vec<f64> = self.gammas.iter().map(|g| g * gamma_scale).collect();
        &self.models[select_model(&scaled, self.order, average)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() != self.gammas.len() + 1 {
            return Err(Error::LengthMismatch { what: "models vs thresholds + 1", left: self.models.len(), right: self.gammas.len() + 1 });
        }
        if self.gammas.windows(2).any(|w| w[0] >= w[1]) || self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Detector(format!("thresholds must be non-negative and strictly increasing: {:?}", self.gammas)));
        }
        if self.models.windows(2).any(|w| w[0].rate >= w[1].rate) {
            return Err(Error::Detector("models must be sorted by strictly increasing rate".into()));
        }
        if self.window == 0 {
            return Err(Error::invalid("selection window must be at least 1"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BankDocument { schema: BANK_SCHEMA.into(), bank: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: BankDocument = serde_json::from_str(s)?;
        if doc.schema != BANK_SCHEMA {
            return Err(Error::Detector(format!("unsupported bank schema '{}'", doc.schema)));
        }
        doc.bank.validate()?;
        Ok(doc.bank)
    }

    pub fn scorer(&self) -> BankScorer<'_> {
        BankScorer::new(self, 0.0, 1.0)
    }
}

/// Streams normalized innovations through the bank.
#[derive(Debug, Clone)]
pub struct BankScorer<'a> {
    bank: &'a DetectorBank,
    window: InnovationWindow,
    offset: f64,
    gamma_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankDecision {
    pub average: f64,
    /// Index of the selected model in order of increasing rate.
    pub model: usize,
    pub score: f64,
    pub anomalous: bool,
}

impl<'a> BankScorer<'a> {
    /// `offset` shifts the decision threshold; `gamma_scale` multiplies every γ.
    pub fn new(bank: &'a DetectorBank, offset: f64, gamma_scale: f64) -> Self {
        Self { bank, window: InnovationWindow::new(bank.window), offset, gamma_scale }
    }

    pub fn push(&mut self, normalized: &Vector2<f64>) -> BankDecision {
        let fed = match self.bank.average {
            AverageSource::Raw => *normalized,
            AverageSource::Centered => normalized - Vector2::from(self.bank.training_mean),
        };
        let average = self.window.push(fed);
        let scaled: Vec<f64> = self.bank.gammas.iter().map(|g| g * self.gamma_scale).collect();
        let model = select_model(&scaled, self.bank.order, average);
        let m = &self.bank.models[model];
        let score = match self.bank.score {
            ScoreScale::Log => m.log_score(normalized),
            ScoreScale::Linear => m.score(normalized),
        };
        let anomalous = score < self.offset;
        BankDecision { average, model, score, anomalous }
    }
}
