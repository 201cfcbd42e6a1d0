use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{idm_acceleration, AccelBounds, IdmParams, LeaderInput, VehicleState};
use crate::{Error, Result};

/// Synthetic trajectory generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Sampling interval (s).
    pub dt: f64,
    /// Perception-reaction delay (s).
    pub tau: f64,
    /// Variance of the white noise on the leader's broadcast (m², m²/s²).
    pub noise_var: f64,
    /// Half-width of the uniform speed perturbation `ε` (m/s²).
    pub eps_range: f64,
    pub idm: IdmParams,
    pub accel_bounds: AccelBounds,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            tau: 0.0,
            noise_var: 0.02,
            eps_range: 0.1,
            idm: IdmParams::default(),
            accel_bounds: AccelBounds::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be non-negative"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be non-negative, got {}", self.noise_var)));
        }
        if !(self.eps_range >= 0.0 && self.eps_range.is_finite()) {
            return Err(Error::invalid("eps_range must be non-negative"));
        }
        self.idm.validate()?;
        self.accel_bounds.validate()
    }
}

/// Resolved values that are not part of the configuration itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    /// Follower's initial net gap: IDM equilibrium at the first trace speed.
    pub initial_gap: f64,
    pub initial_speed: f64,
}

/// Leader/follower trajectories with measured copies and per-epoch,
/// per-sensor anomaly labels (`[position, speed]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub dt: f64,
    pub leader_true: Vec<LeaderInput>,
    /// What the follower receives over the air.
    pub leader_meas: Vec<LeaderInput>,
    pub follower_true: Vec<VehicleState>,
    /// Follower's own sensor readings (possibly corrupted).
    pub follower_meas: Vec<VehicleState>,
    pub labels: Vec<[bool; 2]>,
    pub meta: Option<GenerationMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    x_lead: f64,
    v_lead: f64,
    x_f: f64,
    v_f: f64,
    x_f_meas: f64,
    v_f_meas: f64,
    label_x: u8,
    label_v: u8,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.follower_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.follower_true.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// True when either follower sensor is anomalous at epoch `k`.
    pub fn is_anomalous(&self, k: usize) -> bool {
        self.labels[k][0] || self.labels[k][1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.follower_true.len();
        for (what, len) in [
            ("leader_true", self.leader_true.len()),
            ("leader_meas", self.leader_meas.len()),
            ("follower_meas", self.follower_meas.len()),
            ("labels", self.labels.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch { what, left: n, right: len });
            }
        }
        let finite = self.follower_true.iter().all(|s| s.is_finite())
            && self.leader_true.iter().all(|u| u.x.is_finite() && u.v.is_finite());
        if !finite {
            return Err(Error::invalid("true trajectories must be finite"));
        }
        Ok(())
    }

    /// Writes `t,x_lead,v_lead,x_f,v_f,x_f_meas,v_f_meas,label_x,label_v`.
    /// The leader columns carry the broadcast values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for k in 0..self.len() {
            let (u, s, z) = (self.leader_meas[k], self.follower_true[k], self.follower_meas[k]);
            w.serialize(CsvRow {
                t: self.time(k),
                x_lead: u.x,
                v_lead: u.v,
                x_f: s.x,
                v_f: s.v,
                x_f_meas: z.x,
                v_f_meas: z.v,
                label_x: self.labels[k][0] as u8,
                label_v: self.labels[k][1] as u8,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the CSV written by [`TrajectoryDataset::write_csv`]. The leader's
    /// true trajectory is not stored, so it is set to the broadcast values.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut ds = TrajectoryDataset {
            dt: 0.0,
            leader_true: vec![],
            leader_meas: vec![],
            follower_true: vec![],
            follower_meas: vec![],
            labels: vec![],
            meta: None,
        };
        let mut times = Vec::new();
        for (i, row) in r.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse { path: origin.to_path_buf(), row: i + 1, msg: e.to_string() })?;
            let label = |v: u8| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Parse {
                    path: origin.to_path_buf(),
                    row: i + 1,
                    msg: format!("label must be 0 or 1, got {other}"),
                }),
            };
            times.push(row.t);
            let u = LeaderInput::new(row.x_lead, row.v_lead);
            ds.leader_true.push(u);
            ds.leader_meas.push(u);
            ds.follower_true.push(VehicleState::new(row.x_f, row.v_f));
            ds.follower_meas.push(VehicleState::new(row.x_f_meas, row.v_f_meas));
            ds.labels.push([label(row.label_x)?, label(row.label_v)?]);
        }
        if times.len() < 2 {
            return Err(Error::Parse { path: origin.to_path_buf(), row: times.len(), msg: "need at least two rows".into() });
        }
        ds.dt = times[1] - times[0];
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - ds.dt).abs() > 1e-6 || !(ds.dt > 0.0) {
                return Err(Error::Parse { path: origin.to_path_buf(), row: i + 2, msg: "time column is not uniformly increasing".into() });
            }
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, path)
    }
}

/// Synthesizes a leader/follower pair from a recorded leader speed trace.
///
/// The leader position is the forward sum of the trace. The follower starts
/// at the IDM equilibrium behind the leader and evolves by the discrete
/// recursion
///
/// ```text
/// x(k+1) = x(k) + v(k) Δt
/// v(k+1) = max(0, v(k) + Δt · f(s(k - τ/Δt), u(k - τ/Δt)) + ε_k Δt)
/// ```
///
/// with `ε_k ~ U[-eps_range, eps_range]` and `f` clamped to the acceleration
/// bounds. Lags before the first epoch read the initial state; fractional
/// lags interpolate linearly. The broadcast leader values get white noise of
/// variance `noise_var`; the follower's measured copies equal the truth.
pub fn generate_dataset(trace: &[f64], cfg: &GenConfig, seed: u64) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if trace.len() < 2 {
        return Err(Error::invalid(format!("lead speed trace needs at least 2 samples, got {}", trace.len())));
    }
    if trace.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("lead speed trace must be finite and non-negative"));
    }
    let n = trace.len();
    let dt = cfg.dt;
    let p = &cfg.idm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut leader = Vec::with_capacity(n);
    let mut x_lead = 0.0;
    for &v in trace {
        leader.push(LeaderInput::new(x_lead, v));
        x_lead += v * dt;
    }

    let v_init = trace[0];
    let gap0 = p.equilibrium_gap(v_init)?;
    let mut follower = Vec::with_capacity(n);
    follower.push(VehicleState::new(leader[0].x - p.vehicle_length - gap0, v_init));

    let lag = cfg.tau / dt;
    let delayed = |series_f: &[VehicleState], k: usize| -> (VehicleState, LeaderInput) {
        let pos = (k as f64 - lag).max(0.0);
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        if w < 1e-9 || i + 1 >= series_f.len() {
            (series_f[i.min(series_f.len() - 1)], leader[i.min(series_f.len() - 1)])
        } else {
            (series_f[i].lerp(series_f[i + 1], w), leader[i].lerp(leader[i + 1], w))
        }
    };

    for k in 0..n - 1 {
        let cur = follower[k];
        let gap = leader[k].x - cur.x - p.vehicle_length;
        if !(gap > 0.0) {
            return Err(Error::Integration(format!(
                "follower collided with leader at epoch {k} (net gap {gap:.3} m)"
            )));
        }
        let (ds, du) = delayed(&follower, k);
        let accel = cfg.accel_bounds.clamp(idm_acceleration(ds, du, p)?);
        let eps = if cfg.eps_range > 0.0 { rng.random_range(-cfg.eps_range..=cfg.eps_range) } else { 0.0 };
        let next = VehicleState::new(cur.x + cur.v * dt, (cur.v + dt * accel + eps * dt).max(0.0));
        follower.push(next);
    }
    let last_gap = leader[n - 1].x - follower[n - 1].x - p.vehicle_length;
    if !(last_gap > 0.0) {
        return Err(Error::Integration(format!("follower collided with leader at epoch {} (net gap {last_gap:.3} m)", n - 1)));
    }

    let leader_meas = if cfg.noise_var > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_var.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        leader
            .iter()
            .map(|u| LeaderInput::new(u.x + noise.sample(&mut rng), u.v + noise.sample(&mut rng)))
            .collect()
    } else {
        leader.clone()
    };

    Ok(TrajectoryDataset {
        dt,
        leader_true: leader,
        leader_meas,
        follower_meas: follower.clone(),
        follower_true: follower,
        labels: vec![[false, false]; n],
        meta: Some(GenerationMeta { seed, initial_gap: gap0, initial_speed: v_init }),
    })
}
