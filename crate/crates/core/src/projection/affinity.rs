//! Input-space affinities: per-point Gaussian bandwidths calibrated to a
//! target perplexity, symmetrised into a joint distribution.

use super::ProjectionError;
use rayon::prelude::*;

pub const PERPLEXITY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 200;
pub const P_FLOOR: f64 = 1e-12;
const DUPLICATE_EPS: f64 = 1e-10;

/// Joint affinities plus the calibrated per-row precisions `beta_i = 1 / (2 sigma_i^2)`.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n`, symmetric, zero diagonal, sums to one.
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
    /// Perplexity achieved by each conditional row.
    pub row_perplexity: Vec<f64>,
}

/// Squared Euclidean distances between the rows of a row-major `n x d` matrix.
pub fn squared_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = &x[i * d..(i + 1) * d];
        for (j, slot) in row.iter_mut().enumerate() {
            let xj = &x[j * d..(j + 1) * d];
            *slot = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    out
}

/// Conditional distribution of one row at precision `beta`, written into
/// `out` (self entry zero). Returns the entropy in bits.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = dj - min;
        let w = (-beta * shifted).exp();
        *o = w;
        z += w;
        weighted += w * shifted;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    // H = ln Z + beta * E[d - min], in nats
    (z.ln() + beta * weighted / z) / std::f64::consts::LN_2
}

/// Bisects the precision of row `i` until `2^H` is within tolerance of the
/// target perplexity. Returns (beta, achieved perplexity).
fn calibrate_row(dist: &mut [f64], i: usize, perplexity: f64, out: &mut [f64]) -> (f64, f64) {
    if dist.iter().enumerate().any(|(j, &v)| j != i && v == 0.0) {
        for (j, v) in dist.iter_mut().enumerate() {
            if j != i && *v == 0.0 {
                *v = DUPLICATE_EPS;
            }
        }
    }
    let mut beta = 1.0;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut best = (beta, f64::INFINITY, 0.0);
    for _ in 0..MAX_BISECTION_STEPS {
        let h = conditional_row(dist, i, beta, out);
        let achieved = h.exp2();
        let err = (achieved - perplexity).abs();
        if err < best.1 {
            best = (beta, err, achieved);
        }
        if err <= PERPLEXITY_TOL * perplexity {
            return (beta, achieved);
        }
        if achieved > perplexity {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
    }
    // Unreachable target (e.g. all neighbours equidistant): keep the closest.
    conditional_row(dist, i, best.0, out);
    (best.0, best.2)
}

/// Calibrates per-row bandwidths on the rows of `x` (row-major `n x d`) and
/// returns the symmetrised joint affinities `(P_cond + P_cond^T) / 2n`.
pub fn calibrate_affinities(x: &[f64], n: usize, d: usize, perplexity: f64) -> Result<Affinities, ProjectionError> {
    if n < 4 {
        return Err(ProjectionError::Domain(format!("affinities need at least 4 points, got {n}")));
    }
    if x.len() != n * d {
        return Err(ProjectionError::Domain(format!("matrix has {} values, expected {n}x{d}", x.len())));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(ProjectionError::Domain(format!("perplexity must lie in (1, {n}), got {perplexity}")));
    }
    let mut dist = squared_distances(x, n, d);
    let mut cond = vec![0.0; n * n];
    let calibrated: Vec<(f64, f64)> = dist
        .par_chunks_mut(n)
        .zip(cond.par_chunks_mut(n))
        .enumerate()
        .map(|(i, (drow, crow))| calibrate_row(drow, i, perplexity, crow))
        .collect();

    let denom = 2.0 * n as f64;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(P_FLOOR);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(Affinities {
        n,
        p,
        betas: calibrated.iter().map(|c| c.0).collect(),
        row_perplexity: calibrated.iter().map(|c| c.1).collect(),
    })
}
