//! Descriptive metrics and per-viewport series extraction.

use crate::model::{Episode, Tensor};
use crate::storage::EpisodeSummary;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("{what} index {index} out of range (len {len})")]
    Bounds { what: &'static str, index: usize, len: usize },
    #[error("{0}")]
    Domain(String),
}

/// Averages cover complete episodes only and are `None` when there are none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub episode_count: u64,
    pub complete_count: u64,
    pub total_steps: u64,
    pub average_return: Option<f64>,
    pub average_duration_s: Option<f64>,
    pub average_length: Option<f64>,
}

/// Per-episode inputs to [`metrics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub n_steps: u64,
    pub complete: bool,
    pub return_sum: f64,
    pub duration_s: f64,
}

impl From<&EpisodeSummary> for EpisodeStats {
    fn from(s: &EpisodeSummary) -> Self {
        EpisodeStats { n_steps: s.n_steps as u64, complete: s.complete, return_sum: s.return_sum, duration_s: s.duration }
    }
}

impl From<&Episode> for EpisodeStats {
    fn from(e: &Episode) -> Self {
        EpisodeStats {
            n_steps: e.len() as u64,
            complete: e.complete,
            return_sum: e.episode_return(1.0).expect("gamma 1 is valid"),
            duration_s: e.duration(),
        }
    }
}

/// Folds episodes in the given order (id order for store listings): sums
/// first, one division at the end.
pub fn metrics<I, T>(episodes: I) -> MetricsSummary
where
    I: IntoIterator<Item = T>,
    T: Into<EpisodeStats>,
{
    let mut m = MetricsSummary {
        episode_count: 0,
        complete_count: 0,
        total_steps: 0,
        average_return: None,
        average_duration_s: None,
        average_length: None,
    };
    let (mut ret, mut dur, mut len) = (0.0, 0.0, 0.0);
    for e in episodes {
        let e: EpisodeStats = e.into();
        m.episode_count += 1;
        m.total_steps += e.n_steps;
        if e.complete {
            m.complete_count += 1;
            ret += e.return_sum;
            dur += e.duration_s;
            len += e.n_steps as f64;
        }
    }
    if m.complete_count > 0 {
        let k = m.complete_count as f64;
        m.average_return = Some(ret / k);
        m.average_duration_s = Some(dur / k);
        m.average_length = Some(len / k);
    }
    m
}

fn component_series(episode: &Episode, what: &'static str, dim: usize, pick: impl Fn(&crate::model::Experience) -> &Tensor) -> Result<Vec<f64>, AnalyticsError> {
    if let Some(first) = episode.experiences.first() {
        let len = pick(first).len();
        if dim >= len {
            return Err(AnalyticsError::Bounds { what, index: dim, len });
        }
    }
    Ok(episode.experiences.iter().map(|e| pick(e).get_f64(dim)).collect())
}

/// Component `component` of the reward vector over time.
pub fn reward_component_series(episode: &Episode, component: usize) -> Result<Vec<f64>, AnalyticsError> {
    component_series(episode, "reward component", component, |e| &e.r)
}

/// Flattened action component `dim` over time.
pub fn action_series(episode: &Episode, dim: usize) -> Result<Vec<f64>, AnalyticsError> {
    component_series(episode, "action dim", dim, |e| &e.a)
}

/// Flattened observation component `dim` over time.
pub fn state_series(episode: &Episode, dim: usize) -> Result<Vec<f64>, AnalyticsError> {
    component_series(episode, "state dim", dim, |e| &e.s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Histogram {
    /// One bin per distinct integer value, ascending.
    Discrete { values: Vec<i64>, counts: Vec<u64> },
    /// `counts[i]` covers `[edges[i], edges[i + 1])`, the last bin closed.
    Continuous { edges: Vec<f64>, counts: Vec<u64> },
}

impl Histogram {
    pub fn total(&self) -> u64 {
        match self {
            Histogram::Discrete { counts, .. } | Histogram::Continuous { counts, .. } => counts.iter().sum(),
        }
    }
}

/// Histogram of `values`; `discrete` counts exact integers, otherwise
/// `bins` equal-width bins span `[min, max]` (one bin for a single-point
/// range). Non-finite values are skipped.
pub fn histogram(values: &[f64], discrete: bool, bins: usize) -> Result<Histogram, AnalyticsError> {
    if bins == 0 {
        return Err(AnalyticsError::Domain("bins must be at least 1".into()));
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    if discrete {
        let mut counts = BTreeMap::new();
        for v in finite {
            *counts.entry(v as i64).or_insert(0u64) += 1;
        }
        return Ok(Histogram::Discrete { values: counts.keys().copied().collect(), counts: counts.into_values().collect() });
    }
    let vals: Vec<f64> = finite.collect();
    let Some(min) = vals.iter().copied().reduce(f64::min) else {
        return Ok(Histogram::Continuous { edges: vec![], counts: vec![] });
    };
    let max = vals.iter().copied().fold(min, f64::max);
    if min == max {
        return Ok(Histogram::Continuous { edges: vec![min, max], counts: vec![vals.len() as u64] });
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for v in vals {
        let i = (((v - min) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let edges = (0..=bins).map(|i| if i == bins { max } else { min + width * i as f64 }).collect();
    Ok(Histogram::Continuous { edges, counts })
}

/// Histogram over every flattened action value of the episode, discrete
/// for integer action types.
pub fn action_histogram(episode: &Episode, bins: usize) -> Result<Histogram, AnalyticsError> {
    let discrete = episode.experiences.first().is_some_and(|e| e.a.dtype().is_integer());
    let values: Vec<f64> = episode.experiences.iter().flat_map(|e| e.a.to_f64_vec()).collect();
    histogram(&values, discrete, bins)
}
