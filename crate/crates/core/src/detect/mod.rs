//! Fault detectors over the filter's innovation stream.
//!
//! Two detectors are available:
//!
//! - the chi-square gate, which flags `νᵀ S⁻¹ ν > σ`;
//! - a bank of one-class SVMs trained on normalized innovations
//!   `ν̄ = S^{-1/2} ν` from clean data. The bank switches between models
//!   with different outlier rates according to a windowed average of `ν̄`.

mod bank;
mod ocsvm;

use std::collections::VecDeque;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

pub use bank::{
    calibrate_gammas, select_model, tail_threshold, AverageSource, BankConfig, BankDecision, BankScorer, Bandwidth, DetectorBank,
    SelectionOrder, BANK_SCHEMA,
};
pub use ocsvm::{median_pairwise_distance, train_ocsvm, train_ocsvm_many, OcsvmModel, SmoOptions, MODEL_SCHEMA};

use crate::linalg::{inv_sqrt_sym, regularized_cholesky};
use crate::{Error, Result};

/// Innovation `ν`, its predicted covariance `S`, the normalized innovation
/// `ν̄ = S^{-1/2} ν` and the windowed L1 average of `ν̄` (equal to `|ν̄|₁`
/// until a detector fills it in).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationRecord {
    pub innovation: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub normalized: Vector2<f64>,
    pub windowed_average: f64,
}

impl InnovationRecord {
    pub fn new(innovation: Vector2<f64>, covariance: Matrix2<f64>) -> Result<Self> {
        let normalized = normalize(&innovation, &covariance)?;
        if !normalized.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularMatrix);
        }
        Ok(Self {
            innovation,
            covariance,
            normalized,
            windowed_average: normalized.abs().sum(),
        })
    }

    pub fn chi2(&self) -> f64 {
        self.normalized.norm_squared()
    }
}

/// `νᵀ S⁻¹ ν`.
pub fn chi2_statistic(nu: &Vector2<f64>, s: &Matrix2<f64>) -> Result<f64> {
    let ch = regularized_cholesky(s)?;
    Ok(nu.dot(&ch.solve(nu)).max(0.0))
}

/// `S^{-1/2} ν` with the symmetric square root.
pub fn normalize(nu: &Vector2<f64>, s: &Matrix2<f64>) -> Result<Vector2<f64>> {
    Ok(inv_sqrt_sym(s)? * nu)
}

/// L1 norm of the mean of the last `n` normalized innovations (all of them
/// during warm-up). Zero for an empty history.
pub fn windowed_average(history: &[Vector2<f64>], n: usize) -> f64 {
    let take = n.max(1).min(history.len());
    if take == 0 {
        return 0.0;
    }
    let sum: Vector2<f64> = history[history.len() - take..].iter().sum();
    (sum / take as f64).abs().sum()
}

/// Rolling version of [`windowed_average`].
#[derive(Debug, Clone)]
pub struct InnovationWindow {
    len: usize,
    buf: VecDeque<Vector2<f64>>,
}

impl InnovationWindow {
    pub fn new(len: usize) -> Self {
        Self { len: len.max(1), buf: VecDeque::with_capacity(len.max(1)) }
    }

    pub fn push(&mut self, v: Vector2<f64>) -> f64 {
        if self.buf.len() == self.len {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        let sum: Vector2<f64> = self.buf.iter().sum();
        (sum / self.buf.len() as f64).abs().sum()
    }
}

/// Quantile of the chi-square distribution with two degrees of freedom,
/// `-2 ln(1 - q)`.
pub fn chi2_quantile_2dof(q: f64) -> f64 {
    -2.0 * (1.0 - q).ln()
}

/// Chi-square gate: anomalous iff `νᵀ S⁻¹ ν > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chi2Config {
    pub threshold: f64,
}

impl Default for Chi2Config {
    /// 99% gate for a 2-D innovation.
    fn default() -> Self {
        Self { threshold: chi2_quantile_2dof(0.99) }
    }
}

impl Chi2Config {
    pub fn new(threshold: f64) -> Result<Self> {
        let c = Self { threshold };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!("chi-square threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn is_anomalous(&self, statistic: f64) -> bool {
        statistic > self.threshold
    }
}
