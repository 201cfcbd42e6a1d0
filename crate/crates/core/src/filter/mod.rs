//! Continuous-prediction, discrete-update adaptive extended Kalman filter.
//!
//! Each epoch runs predict → update → verdict → recover → adapt:
//!
//! 1. the mean follows the delayed motion model and the covariance the
//!    Riccati equation `dP/dt = F P + P Fᵀ + Q̂` over one sampling interval;
//! 2. the measurement update produces the innovation record;
//! 3. a detector decides whether the measurement is anomalous;
//! 4. anomalous epochs keep the prediction instead of the posterior;
//! 5. accepted epochs enter the windowed `Q̂`/`R̂` estimates.

mod noise;

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

pub use noise::{forgetting_weights, NoiseEstimates, WindowEntry};

use crate::detect::InnovationRecord;
use crate::linalg::{psd_project, regularized_inverse, symmetrize};
use crate::motion::{hold_at_standstill, AccelBounds, HistoryBuffer, LeaderInput, MotionModel, VehicleState};
use crate::{Error, Result};

/// Which covariance enters the Riccati right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// `F(t-τ) P(t) + P(t) F(t-τ)ᵀ + Q̂`
    #[default]
    Current,
    /// `F(t-τ) P(t-τ) + P(t-τ) F(t-τ)ᵀ + Q̂`, with `P(t-τ)` read from the
    /// stored posteriors.
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Noise-estimation window `M` (epochs).
    pub window: usize,
    /// Geometric decay of the forgetting factors.
    pub decay: f64,
    /// Diagonal of `P₀` (m², m²/s²).
    pub p0_diag: [f64; 2],
    /// Diagonal of `Q₀`.
    pub q0_diag: [f64; 2],
    /// Diagonal of `R₀`.
    pub r0_diag: [f64; 2],
    /// Lower bounds on the diagonals of the adapted `Q̂` and `R̂`.
    pub q_floor_diag: [f64; 2],
    pub r_floor_diag: [f64; 2],
    /// Upper bounds on the diagonal of the adapted `R̂`.
    pub r_ceiling_diag: Option<[f64; 2]>,
    /// Variances of the broadcast leader position and speed, propagated
    /// into the prior through the model's sensitivity to the leader.
    pub leader_noise_diag: [f64; 2],
    /// Re-estimate `Q̂`/`R̂` online; when false `Q₀`/`R₀` stay fixed.
    pub adaptive: bool,
    pub covariance: CovarianceMode,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
    /// Net-gap floor used when an estimate overlaps the leader (m).
    pub min_gap: f64,
    pub accel_bounds: AccelBounds,
    /// Consecutive flagged epochs after which the next flagged measurement
    /// is accepted anyway to re-acquire the track; 0 disables.
    pub max_coast: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            window: 30,
            decay: 0.9,
            p0_diag: [1.0, 1.0],
            q0_diag: [1e-3, 1e-3],
            r0_diag: [0.02, 0.02],
            q_floor_diag: [1e-4, 1e-4],
            r_floor_diag: [1e-4, 1e-4],
            r_ceiling_diag: Some([0.02, 0.02]),
            leader_noise_diag: [0.02, 0.02],
            adaptive: true,
            covariance: CovarianceMode::Current,
            substeps: 1,
            min_gap: 0.5,
            accel_bounds: AccelBounds::default(),
            max_coast: 20,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        forgetting_weights(self.window, self.decay)?;
        let diag_ok = |d: &[f64; 2], strict: bool| d.iter().all(|v| v.is_finite() && if strict { *v > 0.0 } else { *v >= 0.0 });
        if [self.p0_diag, self.q0_diag, self.r0_diag, self.q_floor_diag, self.r_floor_diag, self.leader_noise_diag].iter().any(|d| !diag_ok(d, false)) {
            return Err(Error::invalid("initial covariances must be finite and non-negative"));
        }
        if let Some(c) = self.r_ceiling_diag {
            if !c.iter().zip(&self.r_floor_diag).all(|(c, f)| c.is_finite() && c >= f && *c > 0.0) {
                return Err(Error::invalid("r_ceiling_diag must be positive, finite and not below r_floor_diag"));
            }
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be at least 1"));
        }
        if !(self.min_gap > 0.0) {
            return Err(Error::invalid("min_gap must be positive"));
        }
        self.accel_bounds.validate()
    }
}

/// Mean and covariance of the follower state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl Gaussian {
    pub fn state(&self) -> VehicleState {
        VehicleState::from_vector(&self.mean)
    }
}

/// Result of the measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub posterior: Gaussian,
    pub innovation: InnovationRecord,
    pub gain: Matrix2<f64>,
}

/// Everything the filter produced at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutput {
    pub epoch: usize,
    pub t: f64,
    pub prior: Gaussian,
    pub posterior: Gaussian,
    pub innovation: InnovationRecord,
    /// Estimate carried forward: the posterior, or the prior when the
    /// measurement was flagged (except on re-acquisition).
    pub recovered: VehicleState,
    pub verdict: bool,
    /// Flagged epoch whose posterior was kept because the filter had coasted
    /// for `max_coast` epochs.
    pub reacquired: bool,
}

/// Running filter: estimate, covariance, noise estimates and the delayed
/// history of estimates and leader inputs.
#[derive(Debug, Clone)]
pub struct FilterState {
    model: MotionModel,
    cfg: FilterConfig,
    estimate: Gaussian,
    noise: NoiseEstimates,
    history: HistoryBuffer,
    cov_history: VecDeque<(f64, Matrix2<f64>)>,
    measurement_map: Matrix2<f64>,
    epoch: usize,
    coasting: usize,
}

impl FilterState {
    /// Initializes from the first measurement `z0` and leader input `u0` at
    /// `t = 0`, with a constant pre-history covering the delay.
    pub fn new(
        model: MotionModel,
        cfg: FilterConfig,
        dt: f64,
        delay: f64,
        z0: VehicleState,
        u0: LeaderInput,
    ) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        let weights = forgetting_weights(cfg.window, cfg.decay)?;
        let diag = |d: [f64; 2]| Matrix2::new(d[0], 0.0, 0.0, d[1]);
        let noise = NoiseEstimates::new(weights, diag(cfg.q0_diag), diag(cfg.r0_diag))?.with_floors(cfg.q_floor_diag, cfg.r_floor_diag).with_r_ceiling(cfg.r_ceiling_diag);
        let mut history = HistoryBuffer::new(dt, delay, cfg.accel_bounds)?;
        history.warm_start(0.0, z0, u0);
        let p0 = diag(cfg.p0_diag);
        let cov_history = history.samples().map(|s| (s.t, p0)).collect();
        Ok(Self {
            model,
            estimate: Gaussian { mean: z0.to_vector(), cov: p0 },
            noise,
            history,
            cov_history,
            measurement_map: Matrix2::identity(),
            epoch: 0,
            coasting: 0,
            cfg,
        })
    }

    pub fn estimate(&self) -> &Gaussian {
        &self.estimate
    }

    pub fn noise(&self) -> &NoiseEstimates {
        &self.noise
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn model(&self) -> &MotionModel {
        &self.model
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn time(&self) -> f64 {
        self.history.latest().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn measurement_map(&self) -> &Matrix2<f64> {
        &self.measurement_map
    }

    /// Projects the current estimate one sampling interval forward.
    pub fn predict(&self) -> Result<Gaussian> {
        let dt = self.history.dt();
        let n = self.cfg.substeps;
        let h = dt / n as f64;
        let start = *self.history.latest().expect("history is warm-started");
        let q = self.noise.q / dt;

        let mut mean = self.estimate.mean;
        let mut cov = self.estimate.cov;
        let mut t = start.t;
        let mut nodes = vec![(t, VehicleState::from_vector(&mean))];
        let mut cov_nodes = vec![(t, cov)];
        let mut jacobians = Vec::with_capacity(n);

        for _ in 0..n {
            let rate = |st: f64, m: &Vector2<f64>, p: &Matrix2<f64>, nodes: &[(f64, VehicleState)], cov_nodes: &[(f64, Matrix2<f64>)]| -> Result<(Vector2<f64>, Matrix2<f64>, Matrix2<f64>)> {
                let stage = VehicleState::from_vector(m);
                let (ds, du) = self.history.delayed_with_nodes(st, stage, nodes)?;
                let raw = self.cfg.accel_bounds.clamp(self.model.acceleration_guarded(ds, du, self.cfg.min_gap));
                let accel = hold_at_standstill(m[1], raw);
                let mut f = self.model.jacobian_guarded(ds, du, self.cfg.min_gap);
                if accel != raw {
                    f[(1, 0)] = 0.0;
                    f[(1, 1)] = 0.0;
                }
                if !f.iter().all(|v| v.is_finite()) {
                    return Err(Error::Integration(format!("non-finite Jacobian at t = {st}")));
                }
                let p_used = match self.cfg.covariance {
                    CovarianceMode::Current => *p,
                    CovarianceMode::Delayed => self.delayed_cov(st, *p, cov_nodes),
                };
                let dm = Vector2::new(ds.v.max(0.0), accel);
                let dp = f * p_used + p_used * f.transpose() + q;
                Ok((dm, dp, f))
            };
            let (m1, p1, f1) = rate(t, &mean, &cov, &nodes, &cov_nodes)?;
            jacobians.push(f1);
            let (m2, p2, _) = rate(t + h / 2.0, &(mean + m1 * (h / 2.0)), &(cov + p1 * (h / 2.0)), &nodes, &cov_nodes)?;
            let (m3, p3, _) = rate(t + h / 2.0, &(mean + m2 * (h / 2.0)), &(cov + p2 * (h / 2.0)), &nodes, &cov_nodes)?;
            let (m4, p4, _) = rate(t + h, &(mean + m3 * h), &(cov + p3 * h), &nodes, &cov_nodes)?;
            mean += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
            cov += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
            t += h;
            nodes.push((t, VehicleState::from_vector(&mean)));
            cov_nodes.push((t, cov));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration("non-finite predicted mean".into()));
        }
        mean[1] = mean[1].max(0.0);
        let cov = match psd_project(&cov) {
            Ok(cov) => cov,
            Err(Error::IndefiniteCovariance { .. }) => {
                let mut p = self.estimate.cov;
                for f in &jacobians {
                    let (phi, qd) = discretize(f, &q, h);
                    p = phi * p * phi.transpose() + qd;
                }
                psd_project(&p)?
            }
            Err(e) => return Err(e),
        };
        Ok(Gaussian { mean, cov: cov + self.input_noise(start.t, dt)? })
    }

    /// `Γ Σ_lead Γᵀ` for a leader sample held over one interval, with
    /// `Γ = [dt²/2; dt] ∂f/∂u`.
    fn input_noise(&self, t: f64, dt: f64) -> Result<Matrix2<f64>> {
        let [sx, sv] = self.cfg.leader_noise_diag;
        if sx == 0.0 && sv == 0.0 {
            return Ok(Matrix2::zeros());
        }
        let state = VehicleState::from_vector(&self.estimate.mean);
        let (ds, du) = self.history.delayed_with_nodes(t, state, &[(t, state)])?;
        let raw = self.cfg.accel_bounds.clamp(self.model.acceleration_guarded(ds, du, self.cfg.min_gap));
        if hold_at_standstill(state.v, raw) != raw {
            return Ok(Matrix2::zeros());
        }
        let (gx, gv) = self.model.input_gradient_guarded(ds, du, self.cfg.min_gap);
        let var = gx * gx * sx + gv * gv * sv;
        let b = Vector2::new(dt * dt / 2.0, dt);
        Ok(b * b.transpose() * var)
    }

    fn delayed_cov(&self, stage_t: f64, stage_p: Matrix2<f64>, cov_nodes: &[(f64, Matrix2<f64>)]) -> Matrix2<f64> {
        let q = stage_t - self.history.delay();
        let interp = |pts: &mut dyn Iterator<Item = (f64, Matrix2<f64>)>| -> Option<Matrix2<f64>> {
            let mut prev: Option<(f64, Matrix2<f64>)> = None;
            for (t, p) in pts {
                if (t - q).abs() <= 1e-12 {
                    return Some(p);
                }
                if t > q {
                    return prev.map(|(t0, p0)| p0 + (p - p0) * ((q - t0) / (t - t0)));
                }
                prev = Some((t, p));
            }
            None
        };
        let mut all = self
            .cov_history
            .iter()
            .copied()
            .chain(cov_nodes.iter().skip(1).copied())
            .chain(std::iter::once((stage_t, stage_p)));
        interp(&mut all).unwrap_or(stage_p)
    }

    /// Measurement update with `z`; `S` is ridge-regularized only if it
    /// fails to factor.
    pub fn update(&self, prior: &Gaussian, z: VehicleState) -> Result<Update> {
        let h = self.measurement_map;
        let nu = z.to_vector() - h * prior.mean;
        let s = symmetrize(&(h * prior.cov * h.transpose() + self.noise.r));
        let s_inv = regularized_inverse(&s)?;
        let gain = prior.cov * h.transpose() * s_inv;
        let mean = prior.mean + gain * nu;
        let cov = psd_project(&(prior.cov - gain * h * prior.cov))?;
        Ok(Update {
            posterior: Gaussian { mean, cov },
            innovation: InnovationRecord::new(nu, s)?,
            gain,
        })
    }

    /// Feeds an accepted epoch into the `Q̂`/`R̂` window. Returns the new
    /// estimates (unchanged when adaptation is disabled).
    pub fn adapt_noise(&mut self, update: &Update, z: VehicleState) -> &NoiseEstimates {
        if self.cfg.adaptive {
            let h = self.measurement_map;
            self.noise.push(WindowEntry {
                innovation: update.innovation.innovation,
                residual: z.to_vector() - h * update.posterior.mean,
                gain: update.gain,
                covariance: update.posterior.cov,
                measurement_map: h,
            });
        }
        &self.noise
    }

    /// Stores the recovered estimate and the epoch's leader input so the
    /// next prediction starts from them.
    pub fn commit(&mut self, estimate: Gaussian, lead: LeaderInput) -> Result<()> {
        let t = self.time() + self.history.dt();
        self.history.push(t, estimate.state(), lead)?;
        self.cov_history.push_back((t, estimate.cov));
        while self.cov_history.len() > self.history.len() {
            self.cov_history.pop_front();
        }
        self.estimate = estimate;
        self.epoch += 1;
        Ok(())
    }

    /// One full epoch. `judge` maps the innovation record to a verdict
    /// (`true` = anomalous) and may fill in its windowed average.
    pub fn step<F>(&mut self, z: VehicleState, lead: LeaderInput, mut judge: F) -> Result<EpochOutput>
    where
        F: FnMut(&mut InnovationRecord) -> Result<bool>,
    {
        let prior = self.predict()?;
        let mut upd = self.update(&prior, z)?;
        let verdict = judge(&mut upd.innovation)?;
        let reacquired = verdict && self.cfg.max_coast > 0 && self.coasting >= self.cfg.max_coast;
        let chosen = recover(&prior, &upd.posterior, verdict && !reacquired);
        self.coasting = if verdict && !reacquired { self.coasting + 1 } else { 0 };
        self.commit(chosen, lead)?;
        if !verdict {
            self.adapt_noise(&upd, z);
        }
        Ok(EpochOutput {
            epoch: self.epoch,
            t: self.time(),
            prior,
            posterior: upd.posterior,
            innovation: upd.innovation,
            recovered: chosen.state(),
            verdict,
            reacquired,
        })
    }
}

/// Exact transition and process-noise integral of `dP/dt = F P + P Fᵀ + Q`
/// with `F` frozen over `h` (Van Loan). Used when the RK4 covariance loses
/// definiteness, e.g. when the Jacobian jumps at standstill.
pub fn discretize(f: &Matrix2<f64>, q: &Matrix2<f64>, h: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-f * h));
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(q * h));
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&(f.transpose() * h));
    let e = m.exp();
    let phi = e.fixed_view::<2, 2>(2, 2).transpose();
    let qd = symmetrize(&(phi * e.fixed_view::<2, 2>(0, 2)));
    (phi, qd)
}

/// Keeps the prior on anomalous epochs, the posterior otherwise.
pub fn recover(prior: &Gaussian, posterior: &Gaussian, verdict: bool) -> Gaussian {
    if verdict {
        *prior
    } else {
        *posterior
    }
}

/// Writes `k,t,x_prior,v_prior,x_post,v_post,nu_x,nu_v,S11,S12,S22,verdict`.
pub fn write_epoch_trace<W: Write>(epochs: &[EpochOutput], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "t", "x_prior", "v_prior", "x_post", "v_post", "nu_x", "nu_v", "S11", "S12", "S22", "verdict"])?;
    for e in epochs {
        let s = &e.innovation.covariance;
        let nu = &e.innovation.innovation;
        w.write_record(&[
            e.epoch.to_string(),
            format!("{:.3}", e.t),
            e.prior.mean[0].to_string(),
            e.prior.mean[1].to_string(),
            e.posterior.mean[0].to_string(),
            e.posterior.mean[1].to_string(),
            nu[0].to_string(),
            nu[1].to_string(),
            s[(0, 0)].to_string(),
            s[(0, 1)].to_string(),
            s[(1, 1)].to_string(),
            (e.verdict as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
