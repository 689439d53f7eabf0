//! Background projection jobs, cached per parameter set and manifest generation.

use crate::projection::{featurize, project_with, subsample_refs, JobControl, ProjectionParams, StepRef};
use crate::storage::Snapshot;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

pub const DEFAULT_MAX_POINTS: usize = 2000;
pub const MAX_POINTS_LIMIT: usize = 5000;
const CACHE_SLOTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRequest {
    pub window: Option<usize>,
    pub max_points: usize,
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
}

impl Default for ProjectionRequest {
    fn default() -> Self {
        let p = ProjectionParams::default();
        ProjectionRequest { window: None, max_points: DEFAULT_MAX_POINTS, perplexity: p.perplexity, seed: p.seed, iterations: p.iterations }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProjectionParamsEcho {
    pub window: Option<usize>,
    pub max_points: usize,
    pub perplexity: f64,
    /// Perplexity actually used, clamped to `(n_points - 1) / 2`.
    pub effective_perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    pub n_points: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProjectionResponse {
    pub session: u64,
    pub generation: u64,
    pub points: Vec<[f64; 2]>,
    /// `[episode_id, t]` per point.
    pub refs: Vec<[u64; 2]>,
    pub kl: f64,
    pub params: ProjectionParamsEcho,
}

/// Runs a projection over a snapshot synchronously.
pub fn compute_projection(
    session: u64,
    snap: &Snapshot,
    req: &ProjectionRequest,
    control: &JobControl,
) -> Result<ProjectionResponse, String> {
    let sizes: Vec<(u64, u32)> = snap.list_episodes().iter().map(|e| (e.id, e.n_steps)).collect();
    let refs = subsample_refs(&sizes, req.window, req.max_points, req.seed).map_err(|e| e.to_string())?;
    let mut by_episode: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for r in &refs {
        by_episode.entry(r.episode_id).or_default().push(r.t);
    }
    let mut episodes = Vec::with_capacity(by_episode.len());
    for &id in by_episode.keys() {
        if control.is_cancelled() {
            return Err("projection cancelled".into());
        }
        episodes.push(snap.read_episode(id).map_err(|e| e.to_string())?);
    }
    let mut steps = Vec::with_capacity(refs.len());
    for ep in &episodes {
        for &t in &by_episode[&ep.id] {
            steps.push((StepRef { episode_id: ep.id, t }, &ep.experiences[t as usize]));
        }
    }
    let features = featurize(snap.schema(), &steps).map_err(|e| e.to_string())?;
    let n = features.n;
    let effective = req.perplexity.min((n as f64 - 1.0) / 2.0);
    let params = ProjectionParams { perplexity: effective, iterations: req.iterations, seed: req.seed, ..Default::default() };
    let out = project_with(&features, &params, control).map_err(|e| e.to_string())?;
    Ok(ProjectionResponse {
        session,
        generation: snap.generation(),
        points: out.coords,
        refs: out.refs.iter().map(|r| [r.episode_id, r.t as u64]).collect(),
        kl: out.kl,
        params: ProjectionParamsEcho {
            window: req.window,
            max_points: req.max_points,
            perplexity: req.perplexity,
            effective_perplexity: effective,
            seed: req.seed,
            iterations: req.iterations,
            n_points: n,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct JobKey {
    session: u64,
    generation: u64,
    window: Option<usize>,
    max_points: usize,
    perplexity_bits: u64,
    seed: u64,
    iterations: usize,
}

impl JobKey {
    fn new(session: u64, generation: u64, req: &ProjectionRequest) -> JobKey {
        JobKey {
            session,
            generation,
            window: req.window,
            max_points: req.max_points,
            perplexity_bits: req.perplexity.to_bits(),
            seed: req.seed,
            iterations: req.iterations,
        }
    }

    fn same_params(&self, other: &JobKey) -> bool {
        JobKey { generation: other.generation, ..self.clone() } == *other
    }
}

#[derive(Default)]
struct Job {
    control: JobControl,
    outcome: Mutex<Option<Result<Arc<ProjectionResponse>, String>>>,
}

#[derive(Debug, Clone)]
pub enum JobStatus {
    Running { progress: f64 },
    Done(Arc<ProjectionResponse>),
    Failed(String),
}

/// Jobs by key plus their insertion order, for eviction.
type JobTable = (HashMap<JobKey, Arc<Job>>, VecDeque<JobKey>);

/// At most one job per (session, generation, parameters). A newer
/// generation cancels the running job for the same parameters.
#[derive(Default)]
pub struct ProjectionJobs {
    jobs: Mutex<JobTable>,
}

impl ProjectionJobs {
    pub fn new() -> ProjectionJobs {
        ProjectionJobs::default()
    }

    /// Status of the job for this snapshot and request, starting it if needed.
    pub fn status_or_start(&self, session: u64, snap: Snapshot, req: ProjectionRequest) -> JobStatus {
        let key = JobKey::new(session, snap.generation(), &req);
        let job = {
            let mut guard = self.jobs.lock().unwrap();
            let (map, order) = &mut *guard;
            if let Some(job) = map.get(&key) {
                job.clone()
            } else {
                order.retain(|k| {
                    let stale = k.same_params(&key);
                    if stale {
                        if let Some(old) = map.remove(k) {
                            old.control.cancel();
                        }
                    }
                    !stale
                });
                while order.len() >= CACHE_SLOTS {
                    if let Some(old) = order.pop_front().and_then(|k| map.remove(&k)) {
                        old.control.cancel();
                    }
                }
                let job = Arc::new(Job::default());
                map.insert(key.clone(), job.clone());
                order.push_back(key);
                let worker = job.clone();
                std::thread::spawn(move || {
                    let res = compute_projection(session, &snap, &req, &worker.control).map(Arc::new);
                    *worker.outcome.lock().unwrap() = Some(res);
                });
                job
            }
        };
        let outcome = job.outcome.lock().unwrap();
        match outcome.as_ref() {
            None => JobStatus::Running { progress: job.control.progress() },
            Some(Ok(r)) => JobStatus::Done(r.clone()),
            Some(Err(e)) => JobStatus::Failed(e.clone()),
        }
    }

    /// Cancels every job (server shutdown).
    pub fn cancel_all(&self) {
        for job in self.jobs.lock().unwrap().0.values() {
            job.control.cancel();
        }
    }
}
