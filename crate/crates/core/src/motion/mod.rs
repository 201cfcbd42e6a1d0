//! Car-following dynamics with a perception-reaction delay.
//!
//! The follower state is `s = [x, v]`. Its delayed state-transition model is
//!
//! ```text
//! ds/dt = g(s(t - τ), u(t - τ)) = [ v(t - τ), f(s(t - τ), u(t - τ)) ]
//! ```
//!
//! where `u = [x_lead, v_lead]` is the leader's broadcast and `f` is the IDM
//! stimulus. The speed integral over `[t - τ, t]` is dropped from the position
//! row; the filter absorbs that approximation error as process noise.

mod dataset;
mod history;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset::{generate_dataset, GenConfig, GenerationMeta, TrajectoryDataset};
pub use history::{AccelBounds, HistoryBuffer, HistorySample};

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Maximum acceleration `a` (m/s²).
    pub max_accel: f64,
    /// Comfortable deceleration `b` (m/s²).
    pub comfortable_decel: f64,
    /// Acceleration exponent `δ`.
    pub exponent: f64,
    /// Desired speed `v0` (m/s).
    pub desired_speed: f64,
    /// Jam distance `s0` (m).
    pub jam_distance: f64,
    /// Time headway `T` (s).
    pub time_headway: f64,
    /// Vehicle length `l` (m).
    pub vehicle_length: f64,
}

impl Default for IdmParams {
    /// City-traffic calibration.
    fn default() -> Self {
        Self {
            max_accel: 1.0,
            comfortable_decel: 1.5,
            exponent: 4.0,
            desired_speed: 33.75,
            jam_distance: 2.0,
            time_headway: 1.0,
            vehicle_length: 5.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.max_accel,
            self.comfortable_decel,
            self.exponent,
            self.desired_speed,
            self.jam_distance,
            self.time_headway,
            self.vehicle_length,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("IDM parameters must be finite"));
        }
        if self.max_accel <= 0.0 || self.comfortable_decel <= 0.0 || self.desired_speed <= 0.0 {
            return Err(Error::invalid("IDM requires a > 0, b > 0 and v0 > 0"));
        }
        if self.jam_distance < 0.0 || self.time_headway < 0.0 || self.vehicle_length < 0.0 {
            return Err(Error::invalid("IDM requires s0, T and vehicle length to be non-negative"));
        }
        Ok(())
    }

    /// Desired dynamic gap `s*(v, Δv)` with `Δv = v - v_lead`.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        self.jam_distance
            + v * self.time_headway
            + v * dv / (2.0 * (self.max_accel * self.comfortable_decel).sqrt())
    }

    /// Net gap at which a follower matching the leader's speed `v` has zero
    /// acceleration: `s*(v, 0) / sqrt(1 - (v / v0)^δ)`.
    pub fn equilibrium_gap(&self, v: f64) -> Result<f64> {
        let free = 1.0 - (v.max(0.0) / self.desired_speed).powf(self.exponent);
        if free <= 0.0 {
            return Err(Error::invalid(format!(
                "no finite equilibrium gap at v = {v} (desired speed {})",
                self.desired_speed
            )));
        }
        Ok(self.desired_gap(v.max(0.0), 0.0) / free.sqrt())
    }
}

/// Follower state: position (m) and speed (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.v)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { x: v[0], v: v[1] }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }

    pub(crate) fn lerp(self, other: Self, w: f64) -> Self {
        Self {
            x: self.x + (other.x - self.x) * w,
            v: self.v + (other.v - self.v) * w,
        }
    }
}

/// Leader's broadcast: position (m) and speed (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LeaderInput {
    pub x: f64,
    pub v: f64,
}

impl LeaderInput {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub(crate) fn lerp(self, other: Self, w: f64) -> Self {
        Self {
            x: self.x + (other.x - self.x) * w,
            v: self.v + (other.v - self.v) * w,
        }
    }

    /// Constant-speed extrapolation by `dt` seconds.
    pub(crate) fn advance(self, dt: f64) -> Self {
        Self { x: self.x + self.v * dt, v: self.v }
    }
}

/// IDM acceleration `a (1 - (v/v0)^δ - (s*/g)²)` for net gap
/// `g = x_lead - x - l`.
pub fn idm_acceleration(state: VehicleState, lead: LeaderInput, params: &IdmParams) -> Result<f64> {
    let gap = lead.x - state.x - params.vehicle_length;
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap { gap });
    }
    Ok(idm_with_gap(state.v, lead.v, gap, params))
}

fn idm_with_gap(v: f64, v_lead: f64, gap: f64, params: &IdmParams) -> f64 {
    let s_star = params.desired_gap(v, v - v_lead);
    let free = (v.max(0.0) / params.desired_speed).powf(params.exponent);
    params.max_accel * (1.0 - free - (s_star / gap).powi(2))
}

/// Partial derivatives `(∂f/∂x, ∂f/∂v)` of the IDM acceleration.
pub fn idm_gradient(state: VehicleState, lead: LeaderInput, params: &IdmParams) -> Result<(f64, f64)> {
    let gap = lead.x - state.x - params.vehicle_length;
    if !(gap > 0.0) {
        return Err(Error::NonPositiveGap { gap });
    }
    Ok(idm_gradient_with_gap(state.v, lead.v, gap, params))
}

fn idm_gradient_with_gap(v: f64, v_lead: f64, gap: f64, params: &IdmParams) -> (f64, f64) {
    let a = params.max_accel;
    let s_star = params.desired_gap(v, v - v_lead);
    let d_sstar_dv =
        params.time_headway + (2.0 * v - v_lead) / (2.0 * (a * params.comfortable_decel).sqrt());
    let d_free_dv = if v > 0.0 {
        params.exponent * v.powf(params.exponent - 1.0) / params.desired_speed.powf(params.exponent)
    } else {
        0.0
    };
    let df_dx = -2.0 * a * s_star * s_star / gap.powi(3);
    let df_dv = -a * (d_free_dv + 2.0 * s_star * d_sstar_dv / (gap * gap));
    (df_dx, df_dv)
}

/// Follower motion model used by the integrator and the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    /// IDM car-following with leader information.
    Idm(IdmParams),
    /// Leader-agnostic baseline: delayed speed drives position, zero
    /// acceleration.
    ConstantVelocity,
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel::Idm(IdmParams::default())
    }
}

impl MotionModel {
    /// Acceleration row of the transition model; errors on overlap.
    pub fn acceleration(&self, state: VehicleState, lead: LeaderInput) -> Result<f64> {
        match self {
            MotionModel::Idm(p) => idm_acceleration(state, lead, p),
            MotionModel::ConstantVelocity => Ok(0.0),
        }
    }

    /// Like [`MotionModel::acceleration`], but floors the net gap at
    /// `min_gap` instead of failing. Estimated states can overlap the leader
    /// when a corrupted measurement is accepted.
    pub fn acceleration_guarded(&self, state: VehicleState, lead: LeaderInput, min_gap: f64) -> f64 {
        match self {
            MotionModel::Idm(p) => {
                let gap = (lead.x - state.x - p.vehicle_length).max(min_gap);
                idm_with_gap(state.v, lead.v, gap, p)
            }
            MotionModel::ConstantVelocity => 0.0,
        }
    }

    /// Jacobian of `g = [v, f]` with respect to `s = [x, v]`.
    pub fn jacobian(&self, state: VehicleState, lead: LeaderInput) -> Result<Matrix2<f64>> {
        let (fx, fv) = match self {
            MotionModel::Idm(p) => idm_gradient(state, lead, p)?,
            MotionModel::ConstantVelocity => (0.0, 0.0),
        };
        Ok(Matrix2::new(0.0, 1.0, fx, fv))
    }

    /// `(∂f/∂x_lead, ∂f/∂v_lead)` under the same gap floor; zero for the
    /// constant-velocity model.
    pub fn input_gradient_guarded(&self, state: VehicleState, lead: LeaderInput, min_gap: f64) -> (f64, f64) {
        match self {
            MotionModel::Idm(p) => {
                let raw = lead.x - state.x - p.vehicle_length;
                let gap = raw.max(min_gap);
                let (fx, _) = idm_gradient_with_gap(state.v, lead.v, gap, p);
                let s_star = p.desired_gap(state.v, state.v - lead.v);
                let fvl = p.max_accel * s_star * state.v / (gap * gap * (p.max_accel * p.comfortable_decel).sqrt());
                (if raw > min_gap { -fx } else { 0.0 }, fvl)
            }
            MotionModel::ConstantVelocity => (0.0, 0.0),
        }
    }

    /// Jacobian consistent with [`MotionModel::acceleration_guarded`]: the
    /// position derivative vanishes where the gap floor is active.
    pub fn jacobian_guarded(&self, state: VehicleState, lead: LeaderInput, min_gap: f64) -> Matrix2<f64> {
        let (fx, fv) = match self {
            MotionModel::Idm(p) => {
                let raw = lead.x - state.x - p.vehicle_length;
                let (fx, fv) = idm_gradient_with_gap(state.v, lead.v, raw.max(min_gap), p);
                (if raw > min_gap { fx } else { 0.0 }, fv)
            }
            MotionModel::ConstantVelocity => (0.0, 0.0),
        };
        Matrix2::new(0.0, 1.0, fx, fv)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MotionModel::Idm(p) => p.validate(),
            MotionModel::ConstantVelocity => Ok(()),
        }
    }
}

/// A stopped vehicle does not roll backwards: braking is cut off once the
/// current speed reaches zero.
pub fn hold_at_standstill(speed: f64, accel: f64) -> f64 {
    if speed <= 0.0 && accel < 0.0 {
        0.0
    } else {
        accel
    }
}

/// `ds/dt` at time `t`, evaluated from the delayed state and leader input
/// at `t - τ` stored in `history`.
pub fn state_derivative(history: &HistoryBuffer, t: f64, model: &MotionModel) -> Result<Vector2<f64>> {
    let (state, lead) = history.lookup(t - history.delay())?;
    let accel = model.acceleration(state, lead)?;
    Ok(Vector2::new(state.v, accel))
}

/// Advances the follower by `dt` from the newest history sample with
/// `substeps` fixed RK4 steps, clamps the speed at zero and appends the
/// result together with `next_lead` to the history.
///
/// Delayed arguments that fall inside the current step (only possible when
/// `τ < dt`) are linearly interpolated between the last known node and the
/// stage state; the leader is extrapolated at constant speed there.
pub fn integrate_step(
    history: &mut HistoryBuffer,
    model: &MotionModel,
    dt: f64,
    substeps: usize,
    next_lead: LeaderInput,
) -> Result<VehicleState> {
    if substeps == 0 || !(dt > 0.0) {
        return Err(Error::invalid("integration needs dt > 0 and at least one substep"));
    }
    let start = *history
        .latest()
        .ok_or_else(|| Error::Integration("empty history".into()))?;
    let bounds = history.accel_bounds();
    let h = dt / substeps as f64;
    let mut nodes = vec![(start.t, start.state)];
    let mut s = start.state.to_vector();
    let mut t = start.t;

    for _ in 0..substeps {
        let rate = |stage_t: f64, stage: &Vector2<f64>, nodes: &[(f64, VehicleState)]| -> Result<Vector2<f64>> {
            let stage_state = VehicleState::from_vector(stage);
            let (ds, lead) = history.delayed_with_nodes(stage_t, stage_state, nodes)?;
            let accel = hold_at_standstill(stage[1], bounds.clamp(model.acceleration(ds, lead)?));
            let out = Vector2::new(ds.v.max(0.0), accel);
            if out.iter().all(|v| v.is_finite()) {
                Ok(out)
            } else {
                Err(Error::Integration(format!("non-finite derivative at t = {stage_t}")))
            }
        };
        let k1 = rate(t, &s, &nodes)?;
        let k2 = rate(t + h / 2.0, &(s + k1 * (h / 2.0)), &nodes)?;
        let k3 = rate(t + h / 2.0, &(s + k2 * (h / 2.0)), &nodes)?;
        let k4 = rate(t + h, &(s + k3 * h), &nodes)?;
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t += h;
        nodes.push((t, VehicleState::from_vector(&s)));
    }

    let mut next = VehicleState::from_vector(&s);
    next.v = next.v.max(0.0);
    if !next.is_finite() {
        return Err(Error::Integration("non-finite state".into()));
    }
    history.push(start.t + dt, next, next_lead)?;
    Ok(next)
}
