//! Lead-speed traces: CSV ingestion and the bundled synthetic profiles.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Sampling interval of every trace, seconds.
pub const TRACE_DT: f64 = 0.1;
const TIME_TOL: f64 = 1e-6;

pub const BUNDLED_TRAIN_CSV: &str = include_str!("../../data/lead_train.csv");
pub const BUNDLED_TEST_CSV: &str = include_str!("../../data/lead_test.csv");
pub const BUNDLED_TRAIN_SEED: u64 = 400;
pub const BUNDLED_TEST_SEED: u64 = 200;

/// Reads a `t,v` CSV with timestamps every 0.1 s.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_trace(file, path)
}

/// Parses trace CSV text; `origin` names the source in errors. Rows are
/// numbered from 1 at the header line.
pub fn parse_trace<R: Read>(reader: R, origin: &Path) -> Result<Vec<f64>> {
    let err = |row: usize, msg: String| Error::Parse { path: PathBuf::from(origin), row, msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "v" {
        return Err(err(1, format!("expected header 't,v', found '{}'", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut speeds = Vec::new();
    let mut last_t: Option<f64> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() != 2 {
            return Err(err(row, format!("expected 2 fields, found {}", rec.len())));
        }
        let parse = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| err(row, format!("{name} '{s}' is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(row, format!("{name} is not finite")))
            }
        };
        let t = parse(&rec[0], "time")?;
        let v = parse(&rec[1], "speed")?;
        if v < 0.0 {
            return Err(err(row, format!("negative speed {v}")));
        }
        if let Some(prev) = last_t {
            let step = t - prev;
            if step.abs() <= TIME_TOL {
                return Err(err(row, format!("duplicate timestamp {t}")));
            }
            if step < 0.0 {
                return Err(err(row, format!("time goes backwards ({prev} -> {t})")));
            }
            if (step - TRACE_DT).abs() > TIME_TOL {
                return Err(err(row, format!("time step {step:.6} s differs from {TRACE_DT} s")));
            }
        }
        last_t = Some(t);
        speeds.push(v);
    }
    if speeds.is_empty() {
        return Err(err(1, "trace has no samples".into()));
    }
    Ok(speeds)
}

pub fn write_trace<W: Write>(speeds: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "v"])?;
    for (k, v) in speeds.iter().enumerate() {
        w.write_record([format!("{:.1}", k as f64 * TRACE_DT), format!("{v:.4}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Shape parameters of [`synth_lead_trace_with`]; ranges are sampled
/// uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceShape {
    /// Standstill at the start of the trace, s.
    pub initial_rest: (f64, f64),
    /// Cruise speeds, m/s.
    pub cruise: (f64, f64),
    /// Cruise durations, s.
    pub hold: (f64, f64),
    /// Mean acceleration magnitude of a speed change, m/s².
    pub mean_accel: (f64, f64),
    /// Probability that a speed change slows down to a crawl.
    pub crawl_prob: f64,
    /// Crawl speeds, m/s.
    pub crawl: (f64, f64),
    /// Crawl durations, s.
    pub crawl_hold: (f64, f64),
}

impl Default for TraceShape {
    fn default() -> Self {
        Self {
            initial_rest: (3.0, 6.0),
            cruise: (4.0, 15.0),
            hold: (6.0, 20.0),
            mean_accel: (0.3, 0.6),
            crawl_prob: 0.3,
            crawl: (1.0, 3.0),
            crawl_hold: (2.0, 6.0),
        }
    }
}

/// Smooth stop-and-go lead-speed profile between 0 and 15 m/s with the
/// default [`TraceShape`].
pub fn synth_lead_trace(samples: usize, seed: u64) -> Vec<f64> {
    synth_lead_trace_with(samples, seed, &TraceShape::default())
}

/// Starts from rest, then alternates cruise segments at random speeds with
/// cosine-shaped speed changes; some changes slow down to a crawl before
/// the next pickup. A low-amplitude ripple is added while moving.
pub fn synth_lead_trace_with(samples: usize, seed: u64, shape: &TraceShape) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = TRACE_DT;
    let mut base = Vec::with_capacity(samples);
    let rest = rng.random_range(shape.initial_rest.0..shape.initial_rest.1);
    base.extend(std::iter::repeat_n(0.0, (rest / dt) as usize));
    let mut v: f64 = 0.0;
    let mut crawling = true;
    while base.len() < samples {
        let target: f64 = if !crawling && rng.random_bool(shape.crawl_prob) {
            rng.random_range(shape.crawl.0..shape.crawl.1)
        } else {
            rng.random_range(shape.cruise.0..shape.cruise.1)
        };
        crawling = target < shape.cruise.0;
        let mean_accel: f64 = rng.random_range(shape.mean_accel.0..shape.mean_accel.1);
        let ramp = ((target - v).abs() / mean_accel).max(1.0);
        let steps = (ramp / dt).ceil() as usize;
        for i in 1..=steps {
            let w = 0.5 - 0.5 * (PI * i as f64 / steps as f64).cos();
            base.push(v + (target - v) * w);
        }
        v = target;
        let hold = if crawling {
            rng.random_range(shape.crawl_hold.0..shape.crawl_hold.1)
        } else {
            rng.random_range(shape.hold.0..shape.hold.1)
        };
        base.extend(std::iter::repeat_n(v, (hold / dt) as usize));
    }
    base.truncate(samples);
    let (a1, a2) = (rng.random_range(0.1..0.25), rng.random_range(0.05..0.15));
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    base.iter()
        .enumerate()
        .map(|(k, &b)| {
            let t = k as f64 * dt;
            let ripple = a1 * (2.0 * PI * t / 23.0 + p1).sin() + a2 * (2.0 * PI * t / 7.0 + p2).sin();
            // Fade the ripple out near standstill.
            let fade = (b / 2.0).min(1.0);
            let v = (b + fade * ripple).clamp(0.0, 15.0);
            (v * 1e4).round() / 1e4
        })
        .collect()
}

pub fn bundled_train_trace() -> Vec<f64> {
    parse_trace(BUNDLED_TRAIN_CSV.as_bytes(), Path::new("<bundled lead_train.csv>")).expect("bundled trace is valid")
}

pub fn bundled_test_trace() -> Vec<f64> {
    parse_trace(BUNDLED_TEST_CSV.as_bytes(), Path::new("<bundled lead_test.csv>")).expect("bundled trace is valid")
}
