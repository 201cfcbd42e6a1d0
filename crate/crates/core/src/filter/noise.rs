use std::collections::VecDeque;

use nalgebra::{Matrix2, Vector2};

use crate::linalg::{outer, symmetrize};
use crate::{Error, Result};

/// Forgetting factors `λ_i ∝ decay^(i-1)`, `i = 1..=window`, normalized to
/// sum to one. `λ_1` weights the newest epoch.
pub fn forgetting_weights(window: usize, decay: f64) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("estimation window must hold at least one epoch"));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::invalid(format!("forgetting decay must lie in (0, 1], got {decay}")));
    }
    let raw: Vec<f64> = (0..window).map(|i| decay.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// One accepted epoch's contribution to the noise estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEntry {
    pub innovation: Vector2<f64>,
    pub residual: Vector2<f64>,
    pub gain: Matrix2<f64>,
    pub covariance: Matrix2<f64>,
    pub measurement_map: Matrix2<f64>,
}

/// Windowed process/measurement noise estimates
///
/// ```text
/// R̂ = Σ λ_i (μ_i μ_iᵀ + H_i P_i H_iᵀ)
/// Q̂ = Σ λ_i K_i ν_i ν_iᵀ K_iᵀ
/// ```
///
/// While fewer than `M` epochs are stored the leading weights are
/// renormalized; with an empty window the initial `Q₀`/`R₀` apply.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimates {
    pub q: Matrix2<f64>,
    pub r: Matrix2<f64>,
    q0: Matrix2<f64>,
    r0: Matrix2<f64>,
    weights: Vec<f64>,
    entries: VecDeque<WindowEntry>,
    q_floor: [f64; 2],
    r_floor: [f64; 2],
    r_ceiling: Option<[f64; 2]>,
}

/// Raises diagonal entries to `floor` (adding a non-negative diagonal keeps
/// the matrix positive semidefinite).
/// Shrinks rows/columns whose variance exceeds the ceiling (`D R D`, which
/// keeps the matrix positive semidefinite).
fn apply_ceiling(m: &mut Matrix2<f64>, ceiling: [f64; 2]) {
    let scale: Vec<f64> = (0..2).map(|i| if m[(i, i)] > ceiling[i] { (ceiling[i] / m[(i, i)]).sqrt() } else { 1.0 }).collect();
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] *= scale[i] * scale[j];
        }
    }
}

fn apply_floor(m: &mut Matrix2<f64>, floor: [f64; 2]) {
    for i in 0..2 {
        m[(i, i)] = m[(i, i)].max(floor[i]);
    }
}

impl NoiseEstimates {
    pub fn new(weights: Vec<f64>, q0: Matrix2<f64>, r0: Matrix2<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("forgetting factors must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("forgetting factors must sum to 1, got {total}")));
        }
        Ok(Self {
            q: q0,
            r: r0,
            q0,
            r0,
            entries: VecDeque::with_capacity(weights.len()),
            weights,
            q_floor: [0.0; 2],
            r_floor: [0.0; 2],
            r_ceiling: None,
        })
    }

    /// Lower bounds for the diagonals of the windowed estimates.
    pub fn with_floors(mut self, q_floor: [f64; 2], r_floor: [f64; 2]) -> Self {
        self.q_floor = q_floor;
        self.r_floor = r_floor;
        self
    }

    pub fn with_r_ceiling(mut self, ceiling: Option<[f64; 2]>) -> Self {
        self.r_ceiling = ceiling;
        self
    }

    pub fn window(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn initial(&self) -> (Matrix2<f64>, Matrix2<f64>) {
        (self.q0, self.r0)
    }

    /// Adds the newest accepted epoch and recomputes `Q̂`, `R̂`.
    pub fn push(&mut self, entry: WindowEntry) {
        if self.entries.len() == self.weights.len() {
            self.entries.pop_back();
        }
        self.entries.push_front(entry);
        self.recompute();
    }

    fn recompute(&mut self) {
        if self.entries.is_empty() {
            self.q = self.q0;
            self.r = self.r0;
            return;
        }
        let used = &self.weights[..self.entries.len()];
        let norm: f64 = used.iter().sum();
        let mut q = Matrix2::zeros();
        let mut r = Matrix2::zeros();
        for (w, e) in used.iter().zip(&self.entries) {
            let w = w / norm;
            r += (outer(&e.residual, &e.residual)
                + e.measurement_map * e.covariance * e.measurement_map.transpose())
                * w;
            let kv = e.gain * e.innovation;
            q += outer(&kv, &kv) * w;
        }
        self.q = symmetrize(&q);
        self.r = symmetrize(&r);
        if let Some(c) = self.r_ceiling {
            apply_ceiling(&mut self.r, c);
        }
        apply_floor(&mut self.q, self.q_floor);
        apply_floor(&mut self.r, self.r_floor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn entry(mu: Vector2<f64>, nu: Vector2<f64>, p: Matrix2<f64>) -> WindowEntry {
        WindowEntry {
            innovation: nu,
            residual: mu,
            gain: Matrix2::identity() * 0.5,
            covariance: p,
            measurement_map: Matrix2::identity(),
        }
    }

    #[test]
    fn weights_are_normalized_and_decaying() {
        let w = forgetting_weights(30, 0.9).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
        assert!(forgetting_weights(0, 0.9).is_err());
        assert!(forgetting_weights(3, 0.0).is_err());
    }

    #[test]
    fn single_term_window() {
        let mut n = NoiseEstimates::new(vec![1.0], Matrix2::identity(), Matrix2::identity()).unwrap();
        n.push(entry(Vector2::zeros(), Vector2::zeros(), Matrix2::identity() * 0.2));
        assert_relative_eq!(n.r, Matrix2::identity() * 0.2, epsilon = 1e-15);
        assert_eq!(n.q, Matrix2::zeros());
    }

    #[test]
    fn doubling_residuals_quadruples_their_share() {
        let mu = Vector2::new(0.3, -0.1);
        let w = forgetting_weights(3, 0.9).unwrap();
        let mut a = NoiseEstimates::new(w.clone(), Matrix2::zeros(), Matrix2::zeros()).unwrap();
        let mut b = NoiseEstimates::new(w, Matrix2::zeros(), Matrix2::zeros()).unwrap();
        for _ in 0..3 {
            a.push(entry(mu, Vector2::zeros(), Matrix2::zeros()));
            b.push(entry(mu * 2.0, Vector2::zeros(), Matrix2::zeros()));
        }
        assert_relative_eq!(b.r, a.r * 4.0, epsilon = 1e-14);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(NoiseEstimates::new(vec![0.5, 0.4], Matrix2::zeros(), Matrix2::zeros()).is_err());
        assert!(NoiseEstimates::new(vec![1.5, -0.5], Matrix2::zeros(), Matrix2::zeros()).is_err());
    }

    #[test]
    fn window_slides() {
        let mut n = NoiseEstimates::new(vec![0.5, 0.5], Matrix2::zeros(), Matrix2::zeros()).unwrap();
        for i in 0..5 {
            n.push(entry(Vector2::new(i as f64, 0.0), Vector2::zeros(), Matrix2::zeros()));
        }
        assert_eq!(n.len(), 2);
        // Mean of 3² and 4².
        assert_relative_eq!(n.r[(0, 0)], 12.5, epsilon = 1e-12);
    }
}
