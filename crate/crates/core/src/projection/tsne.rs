//! Exact t-SNE: Student-t kernel in two dimensions, gradient descent with
//! momentum and per-coordinate gains.

use super::{JobControl, ProjectionError, ProjectionParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;
const Q_FLOOR: f64 = 1e-300;

/// Unnormalised Student-t similarities `1 / (1 + |y_i - y_j|^2)` (zero diagonal)
/// and their sum.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = w;
            num[j * n + i] = w;
            z += 2.0 * w;
        }
    }
    (num, z)
}

/// `KL(P || Q)` for the embedding `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let (num, z) = kernel(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / z).max(Q_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Gradient of `KL(exaggeration * P || Q)` with respect to `y`:
/// `4 * sum_j (e p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, z) = kernel(y);
    (0..n)
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = 4.0 * (exaggeration * p[i * n + j] - w / z) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

fn recenter(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|v| v[0]).sum::<f64>() / n;
    let my = y.iter().map(|v| v[1]).sum::<f64>() / n;
    for v in y.iter_mut() {
        v[0] -= mx;
        v[1] -= my;
    }
}

/// Seeded Gaussian initialisation with standard deviation 1e-4.
pub fn initial_embedding(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub y: Vec<[f64; 2]>,
    pub kl: f64,
    /// KL right after early exaggeration ends, when the run is that long.
    pub kl_after_exaggeration: Option<f64>,
}

/// Minimises `KL(P || Q)` from the seeded initial embedding.
pub fn optimize(p: &[f64], n: usize, params: &ProjectionParams, control: &JobControl) -> Result<Optimized, ProjectionError> {
    let mut y = initial_embedding(n, params.seed);
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_after_exaggeration = None;
    for iter in 0..params.iterations {
        if control.is_cancelled() {
            return Err(ProjectionError::Cancelled);
        }
        let exaggerating = iter < params.exaggeration_iters;
        let exaggeration = if exaggerating { params.early_exaggeration } else { 1.0 };
        let momentum = if iter < params.momentum_switch_iter { params.initial_momentum } else { params.final_momentum };
        let grad = kl_gradient(p, &y, exaggeration);
        for (i, g) in grad.iter().enumerate() {
            if !(g[0].is_finite() && g[1].is_finite()) {
                return Err(ProjectionError::NonFinite { iteration: iter, index: i });
            }
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - params.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        recenter(&mut y);
        if iter + 1 == params.exaggeration_iters {
            kl_after_exaggeration = Some(kl_divergence(p, &y));
        }
        control.set_progress(0.1 + 0.9 * (iter + 1) as f64 / params.iterations as f64);
    }
    let kl = kl_divergence(p, &y);
    Ok(Optimized { y, kl, kl_after_exaggeration })
}
