#![allow(dead_code)]

use cav_detect::detect::OcsvmModel;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Transition of the constant-velocity model over `dt`.
pub fn cv_phi(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

/// Process noise accumulated over `dt` for white noise of spectral density
/// `diag(qx, qv)` driving `[x, v]` under constant-velocity dynamics.
pub fn cv_qd(spectral: [f64; 2], dt: f64) -> Matrix2<f64> {
    let [qx, qv] = spectral;
    Matrix2::new(qx * dt + qv * dt.powi(3) / 3.0, qv * dt * dt / 2.0, qv * dt * dt / 2.0, qv * dt)
}

/// Plain discrete Kalman filter, H = I.
pub struct KalmanOracle {
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
    pub phi: Matrix2<f64>,
    pub qd: Matrix2<f64>,
    pub r: Matrix2<f64>,
}

pub struct OracleStep {
    pub prior_x: Vector2<f64>,
    pub prior_p: Matrix2<f64>,
    pub post_x: Vector2<f64>,
    pub post_p: Matrix2<f64>,
    pub innovation: Vector2<f64>,
    pub s: Matrix2<f64>,
}

impl KalmanOracle {
    pub fn step(&mut self, z: Vector2<f64>) -> OracleStep {
        let prior_x = self.phi * self.x;
        let prior_p = self.phi * self.p * self.phi.transpose() + self.qd;
        let s = prior_p + self.r;
        let k = prior_p * s.try_inverse().unwrap();
        let innovation = z - prior_x;
        self.x = prior_x + k * innovation;
        self.p = (Matrix2::identity() - k) * prior_p;
        OracleStep { prior_x, prior_p, post_x: self.x, post_p: self.p, innovation, s }
    }
}

/// Truth and measurements of a constant-velocity vehicle driven by
/// discrete process noise `qd` and observed with noise `diag(r)`.
pub fn simulate_cv(n: usize, x0: Vector2<f64>, qd: &Matrix2<f64>, r: [f64; 2], dt: f64, seed: u64) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let lq = qd.cholesky().map(|c| c.l()).unwrap_or_else(Matrix2::zeros);
    let phi = cv_phi(dt);
    let mut x = x0;
    let mut truth = Vec::with_capacity(n);
    let mut meas = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            x = phi * x + lq * Vector2::new(normal(), normal());
        }
        truth.push(x);
        meas.push(x + Vector2::new(r[0].sqrt() * normal(), r[1].sqrt() * normal()));
    }
    (truth, meas)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by direct enumeration of all pairs.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

pub fn gaussian_cloud(n: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect()
}

pub fn rbf_matrix(points: &[Vector2<f64>], bandwidth: f64) -> DMatrix<f64> {
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    DMatrix::from_fn(points.len(), points.len(), |i, j| (-(points[i] - points[j]).norm_squared() * g).exp())
}

/// Euclidean projection onto `{a : Σa = 1, 0 ≤ a ≤ c}` by bisection on the
/// shift.
fn project_capped_simplex(y: &DVector<f64>, c: f64) -> DVector<f64> {
    let total = |t: f64| y.iter().map(|v| (v - t).clamp(0.0, c)).sum::<f64>();
    let (mut lo, mut hi) = (y.min() - c - 1.0, y.max() + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    y.map(|v| (v - t).clamp(0.0, c))
}

pub struct QpSolution {
    pub alpha: DVector<f64>,
    pub rho: f64,
    /// Largest KKT violation of the returned point.
    pub violation: f64,
}

/// `max G_j over α_j > 0` minus `min G_j over α_j < C`, with `G = Kα`.
pub fn kkt_violation(k: &DMatrix<f64>, alpha: &DVector<f64>, c: f64, eps: f64) -> f64 {
    let g = k * alpha;
    let up = (0..alpha.len()).filter(|&j| alpha[j] > eps).map(|j| g[j]).fold(f64::NEG_INFINITY, f64::max);
    let low = (0..alpha.len()).filter(|&j| alpha[j] < c - eps).map(|j| g[j]).fold(f64::INFINITY, f64::min);
    (up - low).max(0.0)
}

/// Dense one-class SVM dual `min ½αᵀKα, Σα = 1, 0 ≤ α ≤ 1/(p l)`:
/// accelerated projected gradient to find the active set, then an exact
/// linear solve on the free variables.
pub fn dense_qp_ocsvm(points: &[Vector2<f64>], rate: f64, bandwidth: f64) -> QpSolution {
    let l = points.len();
    let c = 1.0 / (rate * l as f64);
    let k = rbf_matrix(points, bandwidth);
    let lip = k.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut a = project_capped_simplex(&DVector::from_element(l, 1.0 / l as f64), c);
    let mut y = a.clone();
    let mut t = 1.0f64;
    let mut best: Option<QpSolution> = None;
    for round in 0..40 {
        for _ in 0..2000 {
            let next = project_capped_simplex(&(&y - (&k * &y) / lip), c);
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &next + (&next - &a) * ((t - 1.0) / t_next);
            a = next;
            t = t_next;
        }
        if let Some(sol) = polish(&k, &a, c) {
            if sol.violation < 1e-10 {
                return sol;
            }
            if best.as_ref().is_none_or(|b| sol.violation < b.violation) {
                best = Some(sol);
            }
        }
        if round == 39 {
            break;
        }
    }
    best.unwrap_or_else(|| {
        let violation = kkt_violation(&k, &a, c, 1e-12);
        let g = &k * &a;
        let free: Vec<f64> = (0..l).filter(|&j| a[j] > 1e-9 && a[j] < c - 1e-9).map(|j| g[j]).collect();
        let rho = free.iter().sum::<f64>() / free.len().max(1) as f64;
        QpSolution { alpha: a, rho, violation }
    })
}

fn polish(k: &DMatrix<f64>, a: &DVector<f64>, c: f64) -> Option<QpSolution> {
    let l = a.len();
    let tol = 1e-7 * c;
    let free: Vec<usize> = (0..l).filter(|&j| a[j] > tol && a[j] < c - tol).collect();
    let upper: Vec<usize> = (0..l).filter(|&j| a[j] >= c - tol).collect();
    let nf = free.len();
    if nf == 0 {
        return None;
    }
    let mut m = DMatrix::zeros(nf + 1, nf + 1);
    let mut rhs = DVector::zeros(nf + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            m[(r, s)] = k[(i, j)];
        }
        m[(r, nf)] = -1.0;
        m[(nf, r)] = 1.0;
        rhs[r] = -upper.iter().map(|&j| k[(i, j)] * c).sum::<f64>();
    }
    rhs[nf] = 1.0 - c * upper.len() as f64;
    let sol = m.lu().solve(&rhs)?;
    let mut alpha = DVector::zeros(l);
    for &j in &upper {
        alpha[j] = c;
    }
    for (r, &j) in free.iter().enumerate() {
        alpha[j] = sol[r];
    }
    if alpha.iter().any(|&v| v < -1e-12 || v > c + 1e-12) {
        return None;
    }
    let rho = sol[nf];
    let g = k * &alpha;
    let mut violation: f64 = 0.0;
    for j in 0..l {
        if alpha[j] <= 1e-14 {
            violation = violation.max(rho - g[j]);
        } else if alpha[j] >= c - 1e-14 {
            violation = violation.max(g[j] - rho);
        } else {
            violation = violation.max((g[j] - rho).abs());
        }
    }
    Some(QpSolution { alpha, rho, violation })
}

pub fn qp_decision(points: &[Vector2<f64>], sol: &QpSolution, bandwidth: f64, x: &Vector2<f64>) -> f64 {
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    points.iter().zip(sol.alpha.iter()).map(|(p, a)| a * (-(p - x).norm_squared() * g).exp()).sum::<f64>() - sol.rho
}

/// KKT residual of a trained model recomputed from the training points:
/// dual weights are matched to points by their centered coordinates, the
/// gradient `G_j = Σ α_i K(x_i, x_j)` comes from the model's own score.
pub fn model_kkt_residual(model: &OcsvmModel, points: &[Vector2<f64>]) -> f64 {
    let c = model.upper_bound();
    let mut weight = std::collections::HashMap::new();
    for (p, a) in model.support_points.iter().zip(&model.dual_weights) {
        weight.insert((p[0].to_bits(), p[1].to_bits()), *a);
    }
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    let mut total = 0.0;
    for x in points {
        let key = ((x[0] - model.mean_offset[0]).to_bits(), (x[1] - model.mean_offset[1]).to_bits());
        let a = weight.get(&key).copied().unwrap_or(0.0);
        total += a;
        let g = model.score(x) + model.rho;
        if a > 0.0 {
            up = up.max(g);
        }
        if a < c {
            low = low.min(g);
        }
    }
    assert!((total - 1.0).abs() < 1e-9, "dual weights of the training points sum to {total}");
    (up - low).max(0.0)
}
