//! Python bindings: protocol encoding for training scripts, plus read-only
//! access to stored sessions and the projection engine.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use vizarel_core::analytics::metrics;
use vizarel_core::model::{DType, Experience, SessionSchema, StepBatch, Tensor};
use vizarel_core::projection::{project as run_projection, FeatureMatrix, ProjectionParams, StepRef};
use vizarel_core::storage::{open_snapshot, Snapshot};
use vizarel_core::wire::{decode_message, encode_message, Message, MessageKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dtype(name: &str) -> PyResult<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        "i32" => Ok(DType::I32),
        "u8" => Ok(DType::U8),
        other => Err(PyValueError::new_err(format!("unknown dtype {other:?}"))),
    }
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
        DType::I32 => "i32",
        DType::U8 => "u8",
    }
}

/// Declared layout of a session.
#[pyclass(name = "Schema", module = "vizarel", frozen)]
struct PySchema {
    inner: SessionSchema,
}

#[pymethods]
impl PySchema {
    #[new]
    #[pyo3(signature = (obs_dim, action_dim, reward_dim=1, obs_type="f32", action_type="f32", reward_type="f32", has_frames=false, steps=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        obs_dim: Vec<u32>,
        action_dim: Vec<u32>,
        reward_dim: u32,
        obs_type: &str,
        action_type: &str,
        reward_type: &str,
        has_frames: bool,
        steps: u64,
    ) -> PyResult<Self> {
        let inner = SessionSchema {
            steps,
            obs_dim,
            obs_type: dtype(obs_type)?,
            action_dim,
            action_type: dtype(action_type)?,
            reward_dim,
            reward_type: dtype(reward_type)?,
            has_frames,
        };
        inner.validate().map_err(value_err)?;
        Ok(PySchema { inner })
    }

    #[getter]
    fn obs_dim(&self) -> Vec<u32> {
        self.inner.obs_dim.clone()
    }

    #[getter]
    fn action_dim(&self) -> Vec<u32> {
        self.inner.action_dim.clone()
    }

    #[getter]
    fn reward_dim(&self) -> u32 {
        self.inner.reward_dim
    }

    #[getter]
    fn has_frames(&self) -> bool {
        self.inner.has_frames
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "Schema(obs_dim={:?}, obs_type='{}', action_dim={:?}, action_type='{}', reward_dim={}, reward_type='{}', has_frames={})",
            s.obs_dim,
            dtype_name(s.obs_type),
            s.action_dim,
            dtype_name(s.action_type),
            s.reward_dim,
            dtype_name(s.reward_type),
            if s.has_frames { "True" } else { "False" },
        )
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    /// INIT message bytes.
    fn encode_init<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_message(&Message::init(&self.inner)))
    }

    /// LOG_STATE message bytes for `n` steps. Values are flat row-major
    /// lists cast to the schema's dtypes; `frames` holds raw HxWxC pixels.
    #[pyo3(signature = (obses, actions, rewards, dones, frames=None, frame_shape=None))]
    #[allow(clippy::too_many_arguments)]
    fn encode_log_state<'py>(
        &self,
        py: Python<'py>,
        obses: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        dones: Vec<bool>,
        frames: Option<Vec<u8>>,
        frame_shape: Option<Vec<u32>>,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let s = &self.inner;
        let n = dones.len() as u32;
        let stacked = |dims: &[u32]| std::iter::once(n).chain(dims.iter().copied()).collect::<Vec<u32>>();
        let frames = match (frames, frame_shape) {
            (Some(px), Some(shape)) => Some(Tensor::from_u8(stacked(&shape), &px).map_err(value_err)?),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("frames and frame_shape go together")),
        };
        let batch = StepBatch {
            n_samples: n,
            obses: Tensor::from_f64_cast(s.obs_type, stacked(&s.obs_dim), &obses).map_err(value_err)?,
            actions: Tensor::from_f64_cast(s.action_type, stacked(&s.action_dim), &actions).map_err(value_err)?,
            rewards: Tensor::from_f64_cast(s.reward_type, vec![n, s.reward_dim], &rewards).map_err(value_err)?,
            dones,
            frames,
        };
        let batch = batch.conform(s).map_err(value_err)?;
        Ok(PyBytes::new(py, &encode_message(&Message::log_state(&batch))))
    }
}

#[pyfunction]
fn encode_flush<'py>(py: Python<'py>) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &encode_message(&Message::flush()))
}

/// Decodes one server reply from the front of `data`.
/// Returns `(reply, consumed)`; `reply` is a dict with a `kind` key.
#[pyfunction]
fn decode_reply<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(Bound<'py, PyDict>, usize)> {
    let (m, used) = decode_message(data).map_err(value_err)?;
    let d = PyDict::new(py);
    match m.kind {
        MessageKind::Ack => {
            d.set_item("kind", "ack")?;
            d.set_item("value", m.ack_value())?;
        }
        MessageKind::Error => {
            let body = m.parse_error().map_err(value_err)?;
            d.set_item("kind", "error")?;
            d.set_item("code", body.code as u8)?;
            d.set_item("retry_after_ms", body.retry_after_ms)?;
            d.set_item("message", body.message)?;
        }
        other => return Err(PyValueError::new_err(format!("{other:?} is not a server reply"))),
    }
    Ok((d, used))
}

/// Discounted return of a reward sequence.
#[pyfunction]
#[pyo3(signature = (rewards, gamma=1.0))]
fn compute_return(rewards: Vec<f64>, gamma: f64) -> PyResult<f64> {
    vizarel_core::compute_return(&rewards, gamma).map_err(value_err)
}

/// Half-open `(start, end, complete)` spans of a done-flag stream.
#[pyfunction]
fn segment_episodes(dones: Vec<bool>) -> Vec<(usize, usize, bool)> {
    vizarel_core::segment_episodes(&dones).into_iter().map(|s| (s.start, s.end, s.complete)).collect()
}

/// t-SNE of the rows of a matrix, used as given (no standardisation).
/// Returns `(coords, kl)`.
#[pyfunction]
#[pyo3(signature = (rows, perplexity=30.0, iterations=1000, seed=0))]
fn project(py: Python<'_>, rows: Vec<Vec<f64>>, perplexity: f64, iterations: usize, seed: u64) -> PyResult<(Vec<[f64; 2]>, f64)> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let refs = (0..rows.len() as u32).map(|t| StepRef { episode_id: 0, t }).collect();
    let x = FeatureMatrix::from_rows(d, rows.concat(), refs);
    let params = ProjectionParams { perplexity, iterations, seed, ..Default::default() };
    let out = py.detach(|| run_projection(&x, &params)).map_err(value_err)?;
    Ok((out.coords, out.kl))
}

/// Read-only view of one session directory at its latest manifest.
#[pyclass(name = "SessionReader", module = "vizarel", frozen)]
struct PySessionReader {
    snap: Snapshot,
}

fn experience_dict<'py>(py: Python<'py>, e: &Experience) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", e.t)?;
    d.set_item("s", e.s.to_f64_vec())?;
    d.set_item("a", e.a.to_f64_vec())?;
    d.set_item("r", e.r.to_f64_vec())?;
    d.set_item("s_next", e.s_next.as_ref().map(Tensor::to_f64_vec))?;
    d.set_item("done", e.done)?;
    d.set_item("frame", e.frame.as_ref().map(|f| PyBytes::new(py, f.data())))?;
    Ok(d)
}

#[pymethods]
impl PySessionReader {
    #[new]
    fn new(path: std::path::PathBuf) -> PyResult<Self> {
        let snap = open_snapshot(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PySessionReader { snap })
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema { inner: self.snap.schema().clone() }
    }

    #[getter]
    fn generation(&self) -> u64 {
        self.snap.generation()
    }

    fn __len__(&self) -> usize {
        self.snap.episode_count()
    }

    fn episodes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.snap
            .list_episodes()
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("id", e.id)?;
                d.set_item("n_steps", e.n_steps)?;
                d.set_item("complete", e.complete)?;
                d.set_item("return_sum", e.return_sum)?;
                d.set_item("duration", e.duration)?;
                Ok(d)
            })
            .collect()
    }

    fn episode<'py>(&self, py: Python<'py>, id: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ep = self.snap.read_episode(id).map_err(|e| PyIOError::new_err(e.to_string()))?;
        ep.experiences.iter().map(|e| experience_dict(py, e)).collect()
    }

    fn frame<'py>(&self, py: Python<'py>, id: u64, t: u32) -> PyResult<Bound<'py, PyDict>> {
        let e = self.snap.read_frame(id, t).map_err(|e| PyIOError::new_err(e.to_string()))?;
        experience_dict(py, &e)
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = metrics(self.snap.list_episodes().iter());
        let d = PyDict::new(py);
        d.set_item("episode_count", m.episode_count)?;
        d.set_item("complete_count", m.complete_count)?;
        d.set_item("total_steps", m.total_steps)?;
        d.set_item("average_return", m.average_return)?;
        d.set_item("average_duration_s", m.average_duration_s)?;
        d.set_item("average_length", m.average_length)?;
        Ok(d)
    }
}

#[pymodule]
fn vizarel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchema>()?;
    m.add_class::<PySessionReader>()?;
    m.add_function(wrap_pyfunction!(encode_flush, m)?)?;
    m.add_function(wrap_pyfunction!(decode_reply, m)?)?;
    m.add_function(wrap_pyfunction!(compute_return, m)?)?;
    m.add_function(wrap_pyfunction!(segment_episodes, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    Ok(())
}
