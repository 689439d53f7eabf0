//! Step features for projection, and subsampling of step references.

use super::ProjectionError;
use crate::model::{Episode, Experience, SessionSchema, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Image observations are mean-pooled to at most this many pixels per side.
pub const POOL_SIDE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StepRef {
    pub episode_id: u64,
    pub t: u32,
}

/// Row-major `n x d` matrix, one row per step, with the per-column
/// statistics used to standardise it.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
    pub refs: Vec<StepRef>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureMatrix {
    /// Wraps rows that are used as given (identity standardisation).
    pub fn from_rows(d: usize, data: Vec<f64>, refs: Vec<StepRef>) -> FeatureMatrix {
        assert_eq!(data.len(), refs.len() * d, "data must hold one row per ref");
        FeatureMatrix { n: refs.len(), d, data, refs, mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Mean-pools a `[H, W, ...]` observation to at most `POOL_SIDE x POOL_SIDE`,
/// trailing dims flattened into channels. Rank < 2 passes through.
pub fn pool_observation(t: &Tensor) -> Vec<f64> {
    let v = t.to_f64_vec();
    let shape = t.shape();
    if shape.len() < 2 {
        return v;
    }
    let (h, w) = (shape[0] as usize, shape[1] as usize);
    let c: usize = shape[2..].iter().map(|&x| x as usize).product();
    let (oh, ow) = (h.min(POOL_SIDE as usize), w.min(POOL_SIDE as usize));
    if oh == h && ow == w {
        return v;
    }
    let mut out = Vec::with_capacity(oh * ow * c);
    for by in 0..oh {
        let (y0, y1) = (by * h / oh, (by + 1) * h / oh);
        for bx in 0..ow {
            let (x0, x1) = (bx * w / ow, (bx + 1) * w / ow);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            for ch in 0..c {
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += v[(y * w + x) * c + ch];
                    }
                }
                out.push(s / count);
            }
        }
    }
    out
}

fn raw_row(e: &Experience) -> Vec<f64> {
    let s = pool_observation(&e.s);
    let s_next = e.s_next.as_ref().map(pool_observation).unwrap_or_else(|| s.clone());
    let mut row = s;
    row.extend(e.a.to_f64_vec());
    row.extend(e.r.to_f64_vec());
    row.extend(s_next);
    row
}

/// Builds the standardised feature matrix `[s, a, r, s']` (absent `s'`
/// replaced by `s`). Non-finite inputs become zero and zero-variance
/// columns stay zero.
pub fn featurize(schema: &SessionSchema, steps: &[(StepRef, &Experience)]) -> Result<FeatureMatrix, ProjectionError> {
    if steps.is_empty() {
        return Err(ProjectionError::Domain("no steps to featurize".into()));
    }
    let mut data = Vec::new();
    let mut d = 0;
    for (i, (_, e)) in steps.iter().enumerate() {
        schema.check_experience(e).map_err(|err| ProjectionError::Domain(err.to_string()))?;
        let row = raw_row(e);
        if i == 0 {
            d = row.len();
        }
        data.extend(row.into_iter().map(|x| if x.is_finite() { x } else { 0.0 }));
    }
    let n = steps.len();
    let (mut means, mut stds) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..d {
        let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let x = &mut data[i * d + j];
            *x = if std > 1e-12 && std.is_finite() { (*x - mean) / std } else { 0.0 };
        }
        means[j] = mean;
        stds[j] = std;
    }
    Ok(FeatureMatrix { n, d, data, refs: steps.iter().map(|(r, _)| *r).collect(), mean: means, std: stds })
}

/// Picks step references from episodes given as `(id, n_steps)` in id order:
/// the most recent `window` steps (all when `None`), then a seeded uniform
/// sample without replacement down to `max_points`, kept in chronological order.
pub fn subsample_refs(
    episodes: &[(u64, u32)],
    window: Option<usize>,
    max_points: usize,
    seed: u64,
) -> Result<Vec<StepRef>, ProjectionError> {
    if max_points < 4 {
        return Err(ProjectionError::Domain(format!("max_points must be at least 4, got {max_points}")));
    }
    let window = window.unwrap_or(usize::MAX);
    let mut recent = Vec::new();
    'outer: for &(id, n) in episodes.iter().rev() {
        for t in (0..n).rev() {
            if recent.len() >= window {
                break 'outer;
            }
            recent.push(StepRef { episode_id: id, t });
        }
    }
    recent.reverse();
    if recent.len() < 4 {
        return Err(ProjectionError::Domain(format!("need at least 4 steps to project, have {}", recent.len())));
    }
    if recent.len() <= max_points {
        return Ok(recent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, recent.len(), max_points).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| recent[i]).collect())
}

/// `subsample_refs` over materialised episodes.
pub fn subsample(
    episodes: &[Episode],
    window: Option<usize>,
    max_points: usize,
    seed: u64,
) -> Result<Vec<(StepRef, &Experience)>, ProjectionError> {
    let sizes: Vec<(u64, u32)> = episodes.iter().map(|e| (e.id, e.len() as u32)).collect();
    let refs = subsample_refs(&sizes, window, max_points, seed)?;
    Ok(refs
        .into_iter()
        .map(|r| {
            let ep = episodes.iter().find(|e| e.id == r.episode_id).expect("ref from these episodes");
            (r, &ep.experiences[r.t as usize])
        })
        .collect())
}
