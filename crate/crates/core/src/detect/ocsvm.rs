//! One-class SVM with an RBF kernel, trained by SMO on the dual
//!
//! ```text
//! min ½ αᵀ K α   s.t.  0 ≤ α_j ≤ 1/(p l),  Σ α_j = 1
//! ```
//!
//! The decision value is `Σ α_j K(x_j, x) - ρ`; negative values are outliers.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MODEL_SCHEMA: &str = "cav-detect/ocsvm/v1";

/// Pairs with `a_ij` below this are treated as having curvature `TAU`.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoOptions {
    /// Stop when the maximal violating pair gap falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    /// Outlier-rate parameter `p`.
    pub rate: f64,
    /// RBF bandwidth `h` in `exp(-|x - y|² / (2 h²))`.
    pub bandwidth: f64,
    /// Training mean, subtracted from every input before scoring.
    pub mean_offset: [f64; 2],
    pub rho: f64,
    pub support_points: Vec<[f64; 2]>,
    pub dual_weights: Vec<f64>,
    pub training_size: usize,
    /// Maximal KKT violation at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema: String,
    #[serde(flatten)]
    model: OcsvmModel,
}

fn rbf(a: &[f64; 2], b: &[f64; 2], gamma: f64) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (-(dx * dx + dy * dy) * gamma).exp()
}

impl OcsvmModel {
    fn gamma(&self) -> f64 {
        1.0 / (2.0 * self.bandwidth * self.bandwidth)
    }

    /// `Σ α_j K(x_j, x - mean) - ρ`.
    pub fn score(&self, x: &Vector2<f64>) -> f64 {
        let q = [x[0] - self.mean_offset[0], x[1] - self.mean_offset[1]];
        let g = self.gamma();
        let s: f64 = self.support_points.iter().zip(&self.dual_weights).map(|(p, a)| a * rbf(p, &q, g)).sum();
        s - self.rho
    }

    /// `ln(Σ α_j K(x_j, x - mean) / ρ)`: same sign as [`Self::score`] and
    /// strictly increasing in it, but evaluated in the log domain so points
    /// far outside the support keep distinct values.
    pub fn log_score(&self, x: &Vector2<f64>) -> f64 {
        let q = [x[0] - self.mean_offset[0], x[1] - self.mean_offset[1]];
        let g = self.gamma();
        let terms: Vec<f64> = self
            .support_points
            .iter()
            .zip(&self.dual_weights)
            .filter(|(_, a)| **a > 0.0)
            .map(|(p, a)| {
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                a.ln() - (dx * dx + dy * dy) * g
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        lse - self.rho.ln()
    }

    /// Score and verdict; anomalous iff the score is below `offset`
    /// (zero at the trained operating point).
    pub fn decision(&self, x: &Vector2<f64>, offset: f64) -> (f64, bool) {
        let s = self.score(x);
        (s, s < offset)
    }

    pub fn upper_bound(&self) -> f64 {
        1.0 / (self.rate * self.training_size as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument { schema: MODEL_SCHEMA.into(), model: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.schema != MODEL_SCHEMA {
            return Err(Error::Detector(format!("unsupported model schema '{}'", doc.schema)));
        }
        if doc.model.support_points.len() != doc.model.dual_weights.len() {
            return Err(Error::LengthMismatch {
                what: "support points vs dual weights",
                left: doc.model.support_points.len(),
                right: doc.model.dual_weights.len(),
            });
        }
        Ok(doc.model)
    }
}

/// Median Euclidean distance over point pairs, on an evenly strided
/// subsample of at most 1000 points.
pub fn median_pairwise_distance(points: &[Vector2<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points for a pairwise distance"));
    }
    let stride = points.len().div_ceil(1000);
    let sub: Vec<&Vector2<f64>> = points.iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(sub.len() * (sub.len() - 1) / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            d.push((sub[i] - sub[j]).norm());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let m = *m;
    if !(m > 0.0) {
        return Err(Error::invalid("training points are all identical; set a fixed bandwidth"));
    }
    Ok(m)
}

/// Dense symmetric kernel matrix over centered training points.
struct KernelMatrix {
    n: usize,
    data: Vec<f64>,
}

impl KernelMatrix {
    fn new(points: &[[f64; 2]], gamma: f64) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in 0..i {
                let k = rbf(&points[i], &points[j], gamma);
                data[i * n + j] = k;
                data[j * n + i] = k;
            }
        }
        Self { n, data }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    gap: f64,
    iterations: usize,
}

fn full_gradient(k: &KernelMatrix, alpha: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; k.n];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for (gt, kt) in g.iter_mut().zip(k.row(i)) {
                *gt += a * kt;
            }
        }
    }
    g
}

/// Maximal violating pair gap `max_{α<C} -G - min_{α>0} -G`.
fn violation(alpha: &[f64], grad: &[f64], c: f64) -> (f64, Option<usize>) {
    let mut up = f64::NEG_INFINITY;
    let mut up_idx = None;
    let mut low = f64::INFINITY;
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < c && -g > up {
            up = -g;
            up_idx = Some(t);
        }
        if a > 0.0 && -g < low {
            low = -g;
        }
    }
    ((up - low).max(0.0), up_idx)
}

fn solve(k: &KernelMatrix, c: f64, opts: &SmoOptions) -> Result<Solution> {
    let n = k.n;
    // Feasible start: fill the first points up to the box bound.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = c.min(remaining);
        remaining -= *a;
    }
    let mut grad = full_gradient(k, &alpha);
    let mut iterations = 0;

    loop {
        let (gap, up_idx) = violation(&alpha, &grad, c);
        if gap <= opts.tolerance {
            // Refresh the gradient to shed accumulated roundoff before
            // accepting convergence.
            grad = full_gradient(k, &alpha);
            let (gap, _) = violation(&alpha, &grad, c);
            if gap <= opts.tolerance {
                let rho = offset(&alpha, &grad, c);
                return Ok(Solution { alpha, rho, gap, iterations });
            }
            continue;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence { iterations, gap });
        }
        iterations += 1;

        let i = up_idx.expect("a violating pair exists");
        let gi = grad[i];
        let ki = k.row(i);
        // Second-order choice of j among I_low with -G_j < -G_i.
        let mut best = None;
        let mut best_obj = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 {
                let b = grad[t] - gi;
                if b > 0.0 {
                    let a = (ki[i] + k.row(t)[t] - 2.0 * ki[t]).max(TAU);
                    let obj = b * b / a;
                    if obj > best_obj {
                        best_obj = obj;
                        best = Some(t);
                    }
                }
            }
        }
        let j = match best {
            Some(j) => j,
            None => continue,
        };
        let kj = k.row(j);
        let a = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        let mut delta = (grad[j] - gi) / a;
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        if delta >= room_i.min(room_j) {
            delta = room_i.min(room_j);
            if room_i <= room_j {
                alpha[j] -= delta;
                alpha[i] = c;
                if room_i == room_j {
                    alpha[j] = 0.0;
                }
            } else {
                alpha[i] += delta;
                alpha[j] = 0.0;
            }
        } else {
            alpha[i] += delta;
            alpha[j] -= delta;
        }
        for ((g, kti), ktj) in grad.iter_mut().zip(ki).zip(kj) {
            *g += delta * (kti - ktj);
        }
    }
}

/// `ρ` as the mean gradient over free support vectors, or the midpoint of
/// the feasible interval when every multiplier sits on a bound.
fn offset(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= c {
            lb = lb.max(g);
        } else if a <= 0.0 {
            ub = ub.min(g);
        } else {
            sum += g;
            count += 1;
        }
    }
    if count > 0 {
        sum / count as f64
    } else if lb.is_finite() && ub.is_finite() {
        (lb + ub) / 2.0
    } else if lb.is_finite() {
        lb
    } else {
        ub
    }
}

fn check_inputs(points: &[Vector2<f64>], rate: f64, bandwidth: f64) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("one-class SVM needs at least 2 training points, got {}", points.len())));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("outlier rate must lie in (0, 1), got {rate}")));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("training points must be finite"));
    }
    Ok(())
}

/// Trains one model per rate on the same data, sharing the kernel matrix.
/// Points are centered on their mean before training.
pub fn train_ocsvm_many(points: &[Vector2<f64>], rates: &[f64], bandwidth: f64, opts: &SmoOptions) -> Result<Vec<OcsvmModel>> {
    for &r in rates {
        check_inputs(points, r, bandwidth)?;
    }
    let l = points.len();
    let mean: Vector2<f64> = points.iter().sum::<Vector2<f64>>() / l as f64;
    let centered: Vec<[f64; 2]> = points.iter().map(|p| [p[0] - mean[0], p[1] - mean[1]]).collect();
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = KernelMatrix::new(&centered, gamma);
    rates
        .iter()
        .map(|&rate| {
            let c = 1.0 / (rate * l as f64);
            let sol = solve(&k, c, opts)?;
            let (support_points, dual_weights) = centered
                .iter()
                .zip(&sol.alpha)
                .filter(|(_, a)| **a > 0.0)
                .map(|(p, a)| (*p, *a))
                .unzip();
            Ok(OcsvmModel {
                rate,
                bandwidth,
                mean_offset: [mean[0], mean[1]],
                rho: sol.rho,
                support_points,
                dual_weights,
                training_size: l,
                kkt_gap: sol.gap,
                iterations: sol.iterations,
            })
        })
        .collect()
}

pub fn train_ocsvm(points: &[Vector2<f64>], rate: f64, bandwidth: f64, opts: &SmoOptions) -> Result<OcsvmModel> {
    Ok(train_ocsvm_many(points, &[rate], bandwidth, opts)?.remove(0))
}
