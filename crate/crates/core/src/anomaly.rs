//! Sensor anomaly injection.
//!
//! Four anomaly types are added to the follower's measured position
//! (sensor 0) and speed (sensor 1). Onsets follow a per-epoch, per-sensor
//! Bernoulli draw that is only taken while the sensor is free of anomalies.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::motion::TrajectoryDataset;
use crate::{Error, Result};

pub const SENSOR_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyType {
    Short,
    Noise,
    Bias,
    Drift,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 4] = [AnomalyType::Short, AnomalyType::Noise, AnomalyType::Bias, AnomalyType::Drift];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AnomalyType::Short => "short",
            AnomalyType::Noise => "noise",
            AnomalyType::Bias => "bias",
            AnomalyType::Drift => "drift",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown anomaly type '{s}' (expected short, noise, bias or drift)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Per-epoch onset probability.
    pub alpha: f64,
    /// Type parameters `c₁..c₄` for short, noise, bias and drift.
    pub magnitudes: [f64; 4],
    /// Maximum duration in epochs.
    pub max_duration: usize,
    /// Relative type weights (normalized on use).
    pub type_weights: [f64; 4],
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self { alpha: 0.01, magnitudes: [1.0; 4], max_duration: 20, type_weights: [1.0; 4] }
    }
}

impl AnomalyConfig {
    /// Default configuration with every `c_i = c`.
    pub fn with_setting(c: f64) -> Self {
        Self { magnitudes: [c; 4], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("anomaly rate must lie in [0, 1], got {}", self.alpha)));
        }
        if self.magnitudes.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::invalid(format!("anomaly magnitudes must be positive, got {:?}", self.magnitudes)));
        }
        if self.max_duration == 0 {
            return Err(Error::invalid("maximum anomaly duration must be at least 1"));
        }
        if self.type_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.type_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid(format!("type weights must be non-negative with a positive sum, got {:?}", self.type_weights)));
        }
        Ok(())
    }

    fn sample_type(&self, rng: &mut impl Rng) -> AnomalyType {
        let total: f64 = self.type_weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for t in AnomalyType::ALL {
            let w = self.type_weights[t.index()];
            if u < w {
                return t;
            }
            u -= w;
        }
        // Rounding at the upper edge; take the last type with weight.
        *AnomalyType::ALL.iter().rev().find(|t| self.type_weights[t.index()] > 0.0).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyLabel {
    pub sensor: usize,
    #[serde(rename = "type")]
    pub kind: AnomalyType,
    pub onset: usize,
    pub duration: usize,
}

/// Additive offsets for one anomaly of `len` epochs with parameter `c`.
pub fn sample_offsets(kind: AnomalyType, len: usize, c: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("anomaly duration must be at least 1"));
    }
    if kind == AnomalyType::Short && len != 1 {
        return Err(Error::invalid(format!("short anomalies last one epoch, got {len}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("anomaly magnitude must be positive, got {c}")));
    }
    let gauss = Normal::new(0.0, c.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(match kind {
        AnomalyType::Short | AnomalyType::Noise => (0..len).map(|_| gauss.sample(rng)).collect(),
        AnomalyType::Bias => vec![gauss.sample(rng); len],
        AnomalyType::Drift => {
            let m = rng.random_range(0.0..=c);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            drift_ramp(len, sign * m)
        }
    })
}

/// Evenly spaced ramp from 0 to `end` (a single epoch takes `end`).
pub fn drift_ramp(len: usize, end: f64) -> Vec<f64> {
    if len == 1 {
        return vec![end];
    }
    (0..len).map(|i| end * i as f64 / (len - 1) as f64).collect()
}

/// Seeded form of [`sample_offsets`].
pub fn gen_anomaly(kind: AnomalyType, len: usize, c: f64, seed: u64) -> Result<Vec<f64>> {
    sample_offsets(kind, len, c, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Corrupts the follower's measured channels and returns the labels.
/// Anomalies running past the last epoch are truncated.
pub fn inject(clean: &TrajectoryDataset, cfg: &AnomalyConfig, seed: u64) -> Result<(TrajectoryDataset, Vec<AnomalyLabel>)> {
    cfg.validate()?;
    let mut out = clean.clone();
    let mut labels = Vec::new();
    let n = clean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut busy_until = [0usize; SENSOR_COUNT];
    for k in 0..n {
        for sensor in 0..SENSOR_COUNT {
            if k < busy_until[sensor] {
                continue;
            }
            let zeta: f64 = rng.random();
            if !(zeta <= cfg.alpha) || cfg.alpha == 0.0 {
                continue;
            }
            let drawn = rng.random_range(1..=cfg.max_duration);
            let kind = cfg.sample_type(&mut rng);
            let len = if kind == AnomalyType::Short { 1 } else { drawn };
            let offsets = sample_offsets(kind, len, cfg.magnitudes[kind.index()], &mut rng)?;
            let duration = len.min(n - k);
            for (j, off) in offsets.iter().take(duration).enumerate() {
                let m = &mut out.follower_meas[k + j];
                match sensor {
                    0 => m.x += off,
                    _ => m.v += off,
                }
                out.labels[k + j][sensor] = true;
            }
            busy_until[sensor] = k + duration;
            labels.push(AnomalyLabel { sensor, kind, onset: k, duration });
        }
    }
    Ok((out, labels))
}

pub fn write_labels<W: Write>(labels: &[AnomalyLabel], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sensor", "type", "onset", "duration"])?;
    for l in labels {
        w.write_record([l.sensor.to_string(), l.kind.to_string(), l.onset.to_string(), l.duration.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
