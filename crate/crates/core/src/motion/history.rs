use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{LeaderInput, VehicleState};
use crate::{Error, Result};

/// Relative tolerance (in units of Δt) for snapping lookups onto grid points.
const GRID_EPS: f64 = 1e-9;

/// Sanity bounds on generated accelerations, `min ≤ 0 < max` (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AccelBounds {
    fn default() -> Self {
        Self { min: -9.0, max: 3.0 }
    }
}

impl AccelBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min <= 0.0 && self.max > 0.0) {
            return Err(Error::invalid(format!(
                "acceleration bounds need min <= 0 < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistorySample {
    pub t: f64,
    pub state: VehicleState,
    pub lead: LeaderInput,
}

/// Uniformly spaced ring of past follower states and leader inputs, long
/// enough to answer lookups at `t - τ`.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dt: f64,
    delay: f64,
    bounds: AccelBounds,
    capacity: usize,
    samples: VecDeque<HistorySample>,
}

impl HistoryBuffer {
    pub fn new(dt: f64, delay: f64, bounds: AccelBounds) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::invalid(format!("delay must be non-negative, got {delay}")));
        }
        bounds.validate()?;
        let lag = (delay / dt - GRID_EPS).ceil().max(0.0) as usize;
        Ok(Self {
            dt,
            delay,
            bounds,
            capacity: lag + 3,
            samples: VecDeque::with_capacity(lag + 3),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn accel_bounds(&self) -> AccelBounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latest(&self) -> Option<&HistorySample> {
        self.samples.back()
    }

    pub fn samples(&self) -> impl Iterator<Item = &HistorySample> {
        self.samples.iter()
    }

    /// Clears the buffer and back-fills a constant pre-history ending at `t0`
    /// that covers `[t0 - τ, t0]`.
    pub fn warm_start(&mut self, t0: f64, state: VehicleState, lead: LeaderInput) {
        self.samples.clear();
        let n = self.capacity - 1;
        for i in (0..n).rev() {
            self.samples.push_back(HistorySample {
                t: t0 - i as f64 * self.dt,
                state,
                lead,
            });
        }
    }

    /// Appends a sample exactly one step after the newest one.
    pub fn push(&mut self, t: f64, state: VehicleState, lead: LeaderInput) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if ((t - last.t) - self.dt).abs() > GRID_EPS * self.dt.max(t.abs()) * 10.0 {
                return Err(Error::HistoryGap { last: last.t, got: t, dt: self.dt });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(HistorySample { t, state, lead });
        Ok(())
    }

    /// State and leader input at time `q`; exact on grid points, linear in
    /// between.
    pub fn lookup(&self, q: f64) -> Result<(VehicleState, LeaderInput)> {
        let (first, last) = match (self.samples.front(), self.samples.back()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InsufficientHistory { requested: q, earliest: f64::NAN }),
        };
        let pos = (q - first.t) / self.dt;
        let last_pos = (self.samples.len() - 1) as f64;
        if pos < -GRID_EPS * 1e3 || pos > last_pos + GRID_EPS * 1e3 {
            if pos > last_pos {
                return Err(Error::InsufficientHistory { requested: q, earliest: last.t });
            }
            return Err(Error::InsufficientHistory { requested: q, earliest: first.t });
        }
        let pos = pos.clamp(0.0, last_pos);
        let nearest = pos.round();
        if (pos - nearest).abs() <= GRID_EPS * 1e3 {
            let s = &self.samples[nearest as usize];
            return Ok((s.state, s.lead));
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        Ok((a.state.lerp(b.state, w), a.lead.lerp(b.lead, w)))
    }

    /// Delayed state/input for a stage at `stage_t` inside an integration
    /// step that started at the newest sample. `nodes` holds the states
    /// already computed within the step (first node = newest sample).
    pub(crate) fn delayed_with_nodes(
        &self,
        stage_t: f64,
        stage_state: VehicleState,
        nodes: &[(f64, VehicleState)],
    ) -> Result<(VehicleState, LeaderInput)> {
        let q = stage_t - self.delay;
        let last = self
            .samples
            .back()
            .ok_or(Error::InsufficientHistory { requested: q, earliest: f64::NAN })?;
        if q <= last.t + GRID_EPS * self.dt {
            return self.lookup(q);
        }
        let lead = last.lead.advance(q - last.t);
        if stage_t - q <= GRID_EPS * self.dt {
            return Ok((stage_state, lead));
        }
        // Bracket q among the in-step nodes, closing with the stage point.
        let idx = nodes.iter().rposition(|(t, _)| *t <= q + GRID_EPS * self.dt).unwrap_or(0);
        let (t0, s0) = nodes[idx];
        let (t1, s1) = nodes.get(idx + 1).copied().unwrap_or((stage_t, stage_state));
        let w = if t1 > t0 { ((q - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
        Ok((s0.lerp(s1, w), lead))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buffer(delay: f64) -> HistoryBuffer {
        let mut h = HistoryBuffer::new(0.1, delay, AccelBounds::default()).unwrap();
        h.warm_start(0.0, VehicleState::new(0.0, 0.0), LeaderInput::new(10.0, 0.0));
        for k in 1..=20 {
            let t = 0.1 * k as f64;
            h.push(t, VehicleState::new(t, 2.0 * t), LeaderInput::new(10.0 + t, 1.0)).unwrap();
        }
        h
    }

    #[test]
    fn warm_start_covers_the_delay() {
        let mut h = HistoryBuffer::new(0.1, 1.5, AccelBounds::default()).unwrap();
        h.warm_start(3.0, VehicleState::new(1.0, 2.0), LeaderInput::new(9.0, 2.0));
        let (s, _) = h.lookup(1.5).unwrap();
        assert_eq!(s, VehicleState::new(1.0, 2.0));
        assert!(h.lookup(1.3).is_err());
    }

    #[test]
    fn grid_lookup_is_exact_and_off_grid_interpolates() {
        let h = buffer(0.5);
        let (s, _) = h.lookup(2.0 - 0.5).unwrap();
        assert_eq!(s.v, 2.0 * (0.1 * 15.0));
        let (s, u) = h.lookup(1.75).unwrap();
        assert!((s.v - 3.5).abs() < 1e-12);
        assert!((u.x - 11.75).abs() < 1e-12);
    }

    #[test]
    fn capacity_bounds_memory() {
        let h = buffer(0.5);
        assert_eq!(h.len(), 8);
        assert!(matches!(h.lookup(0.5), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn gaps_in_time_are_rejected() {
        let mut h = buffer(0.0);
        let r = h.push(2.3, VehicleState::default(), LeaderInput::default());
        assert!(matches!(r, Err(Error::HistoryGap { .. })));
    }

    #[test]
    fn bounds_are_validated() {
        assert!(HistoryBuffer::new(0.1, 0.0, AccelBounds { min: 1.0, max: 2.0 }).is_err());
        assert!(HistoryBuffer::new(0.0, 0.0, AccelBounds::default()).is_err());
        assert!(HistoryBuffer::new(0.1, -1.0, AccelBounds::default()).is_err());
    }
}
