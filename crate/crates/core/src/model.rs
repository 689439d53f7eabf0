//! Session schema, tensors, experiences and episodes.
//!
//! Everything here is a plain value type. The storage engine, the wire
//! protocol, analytics and the projection all share these definitions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{stream} shape: {detail}")]
    Shape { stream: &'static str, detail: String },
    #[error("index {index} out of bounds (len {len})")]
    Bounds { index: usize, len: usize },
}

/// Element type of a tensor stream. The numeric codes are part of both the
/// wire protocol and the on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    I32 = 3,
    U8 = 4,
}

impl DType {
    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::I32),
            4 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Size of one element in bytes.
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::I32 | DType::U8)
    }
}

/// A dense row-major tensor. Element bytes are always stored little-endian,
/// so equality is bit-exact equality of the logged values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<u32>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<u32>, data: Vec<u8>) -> Result<Tensor, ModelError> {
        let expected = shape_len(&shape).saturating_mul(dtype.size());
        if data.len() != expected {
            return Err(ModelError::Shape {
                stream: "tensor",
                detail: format!(
                    "shape {shape:?} of {dtype:?} needs {expected} bytes, got {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<u32>, values: &[f32]) -> Result<Tensor, ModelError> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Tensor::new(DType::F32, shape, data)
    }

    pub fn from_f64(shape: Vec<u32>, values: &[f64]) -> Result<Tensor, ModelError> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Tensor::new(DType::F64, shape, data)
    }

    pub fn from_i32(shape: Vec<u32>, values: &[i32]) -> Result<Tensor, ModelError> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Tensor::new(DType::I32, shape, data)
    }

    pub fn from_u8(shape: Vec<u32>, values: &[u8]) -> Result<Tensor, ModelError> {
        Tensor::new(DType::U8, shape, values.to_vec())
    }

    /// Builds a tensor of `dtype` from f64 values, casting each element.
    pub fn from_f64_cast(dtype: DType, shape: Vec<u32>, values: &[f64]) -> Result<Tensor, ModelError> {
        match dtype {
            DType::F64 => Tensor::from_f64(shape, values),
            DType::F32 => {
                let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
                Tensor::from_f32(shape, &v)
            }
            DType::I32 => {
                let v: Vec<i32> = values.iter().map(|&x| x as i32).collect();
                Tensor::from_i32(shape, &v)
            }
            DType::U8 => {
                let v: Vec<u8> = values.iter().map(|&x| x as u8).collect();
                Tensor::from_u8(shape, &v)
            }
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[u32] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element `i` of the flattened tensor, widened to f64.
    pub fn get_f64(&self, i: usize) -> f64 {
        let sz = self.dtype.size();
        let b = &self.data[i * sz..(i + 1) * sz];
        match self.dtype {
            DType::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            DType::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            DType::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            DType::U8 => b[0] as f64,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_f64(i)).collect()
    }

    /// Sub-tensor `i` along the leading dimension.
    pub fn row(&self, i: usize) -> Tensor {
        let inner: Vec<u32> = self.shape[1..].to_vec();
        let stride = shape_len(&inner) * self.dtype.size();
        Tensor {
            dtype: self.dtype,
            shape: inner,
            data: self.data[i * stride..(i + 1) * stride].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading dimension.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, ModelError> {
        let first = items.first().ok_or_else(|| ModelError::Domain("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * items.len());
        for item in items {
            if item.dtype != first.dtype || item.shape != first.shape {
                return Err(ModelError::Shape {
                    stream: "stack",
                    detail: format!(
                        "expected {:?} {:?}, got {:?} {:?}",
                        first.dtype, first.shape, item.dtype, item.shape
                    ),
                });
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len() as u32);
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { dtype: first.dtype, shape, data })
    }
}

/// Element count of `shape`, saturating at `usize::MAX` on overflow.
pub fn shape_len(shape: &[u32]) -> usize {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).unwrap_or(usize::MAX)
}

/// Declared layout of the observation, action and reward streams of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSchema {
    /// Expected total step count. A hint only; never enforced.
    pub steps: u64,
    pub obs_dim: Vec<u32>,
    pub obs_type: DType,
    pub action_dim: Vec<u32>,
    pub action_type: DType,
    pub reward_dim: u32,
    pub reward_type: DType,
    pub has_frames: bool,
}

impl SessionSchema {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.reward_dim < 1 {
            return Err(ModelError::Schema("reward_dim must be ≥ 1".into()));
        }
        for (name, dims) in [("obs_dim", &self.obs_dim), ("action_dim", &self.action_dim)] {
            if dims.is_empty() {
                return Err(ModelError::Schema(format!("{name} must have at least one entry")));
            }
            if dims.contains(&0) {
                return Err(ModelError::Schema(format!("{name} entries must be ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn obs_len(&self) -> usize {
        shape_len(&self.obs_dim)
    }

    pub fn action_len(&self) -> usize {
        shape_len(&self.action_dim)
    }

    /// Checks one experience against the declared shapes.
    pub fn check_experience(&self, e: &Experience) -> Result<(), ModelError> {
        check_tensor("obs", &e.s, self.obs_type, &self.obs_dim)?;
        if let Some(next) = &e.s_next {
            check_tensor("obs", next, self.obs_type, &self.obs_dim)?;
        }
        check_tensor("action", &e.a, self.action_type, &self.action_dim)?;
        check_tensor("reward", &e.r, self.reward_type, &[self.reward_dim])?;
        match (&e.frame, self.has_frames) {
            (Some(f), true) => check_frame(f)?,
            (None, false) => {}
            (Some(_), false) => {
                return Err(ModelError::Shape {
                    stream: "frame",
                    detail: "schema declares no frame stream".into(),
                })
            }
            (None, true) => {
                return Err(ModelError::Shape {
                    stream: "frame",
                    detail: "schema requires a frame per step".into(),
                })
            }
        }
        Ok(())
    }
}

fn check_tensor(stream: &'static str, t: &Tensor, dtype: DType, dims: &[u32]) -> Result<(), ModelError> {
    if t.dtype() != dtype || t.shape() != dims {
        return Err(ModelError::Shape {
            stream,
            detail: format!("expected {dtype:?}{dims:?}, got {:?}{:?}", t.dtype(), t.shape()),
        });
    }
    Ok(())
}

fn check_frame(f: &Tensor) -> Result<(), ModelError> {
    let s = f.shape();
    if f.dtype() != DType::U8 || s.len() != 3 || s[2] != 3 || s[0] == 0 || s[1] == 0 {
        return Err(ModelError::Shape {
            stream: "frame",
            detail: format!("expected U8[H, W, 3], got {:?}{:?}", f.dtype(), s),
        });
    }
    Ok(())
}

/// One interaction step `(s, a, r, s_next)` plus the terminal flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub t: u32,
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    /// Absent for terminal steps and for the trailing step of a flushed stream.
    pub s_next: Option<Tensor>,
    pub done: bool,
    pub frame: Option<Tensor>,
}

impl Experience {
    /// Scalar reward: the unweighted sum of the reward components.
    pub fn scalar_reward(&self) -> f64 {
        scalar_reward(&self.r)
    }
}

pub fn scalar_reward(r: &Tensor) -> f64 {
    (0..r.len()).map(|i| r.get_f64(i)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub experiences: Vec<Experience>,
    pub complete: bool,
    pub wall_start: f64,
    pub wall_end: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.wall_end - self.wall_start
    }

    pub fn scalar_rewards(&self) -> Vec<f64> {
        self.experiences.iter().map(Experience::scalar_reward).collect()
    }

    pub fn episode_return(&self, gamma: f64) -> Result<f64, ModelError> {
        compute_return(&self.scalar_rewards(), gamma)
    }

    /// Step indices are dense from zero and `done` appears only at the end
    /// (and there iff the episode is complete).
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        let n = self.experiences.len();
        for (i, e) in self.experiences.iter().enumerate() {
            if e.t as usize != i {
                return Err(ModelError::Domain(format!("step {i} carries index {}", e.t)));
            }
            let last = i + 1 == n;
            if e.done && !last {
                return Err(ModelError::Domain(format!("non-final step {i} is terminal")));
            }
        }
        if self.complete != self.experiences.last().is_some_and(|e| e.done) {
            return Err(ModelError::Domain("complete flag disagrees with final done".into()));
        }
        Ok(())
    }
}

/// A batch of consecutive steps as sent by `log_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub n_samples: u32,
    pub obses: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub dones: Vec<bool>,
    pub frames: Option<Tensor>,
}

impl StepBatch {
    /// Validates the batch against `schema`. Rewards may arrive as `[n]` when
    /// `reward_dim == 1`; they are reshaped to `[n, 1]`.
    pub fn conform(mut self, schema: &SessionSchema) -> Result<StepBatch, ModelError> {
        let n = self.n_samples;
        let lead = |dims: &[u32]| {
            let mut v = vec![n];
            v.extend_from_slice(dims);
            v
        };
        if self.rewards.dtype() == schema.reward_type
            && schema.reward_dim == 1
            && self.rewards.shape() == [n]
        {
            let data = std::mem::take(&mut self.rewards.data);
            self.rewards = Tensor::new(schema.reward_type, vec![n, 1], data)?;
        }
        check_tensor("obs", &self.obses, schema.obs_type, &lead(&schema.obs_dim))?;
        check_tensor("action", &self.actions, schema.action_type, &lead(&schema.action_dim))?;
        check_tensor("reward", &self.rewards, schema.reward_type, &[n, schema.reward_dim])?;
        if self.dones.len() != n as usize {
            return Err(ModelError::Shape {
                stream: "dones",
                detail: format!("expected {n} flags, got {}", self.dones.len()),
            });
        }
        match (&self.frames, schema.has_frames) {
            (Some(f), true) => {
                let s = f.shape();
                if f.dtype() != DType::U8 || s.len() != 4 || s[0] != n || s[3] != 3 || s[1] == 0 || s[2] == 0 {
                    return Err(ModelError::Shape {
                        stream: "frame",
                        detail: format!("expected U8[{n}, H, W, 3], got {:?}{:?}", f.dtype(), s),
                    });
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(ModelError::Shape { stream: "frame", detail: "schema declares no frame stream".into() })
            }
            (None, true) => {
                return Err(ModelError::Shape { stream: "frame", detail: "schema requires frames".into() })
            }
        }
        Ok(self)
    }
}

/// The trailing step of a batch whose successor observation has not arrived yet.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub t: u32,
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub frame: Option<Tensor>,
}

impl Carry {
    fn complete(self, s_next: Option<Tensor>) -> Experience {
        Experience { t: self.t, s: self.s, a: self.a, r: self.r, s_next, done: false, frame: self.frame }
    }

    /// Emits the pending step with an absent successor, as done on flush.
    pub fn into_trailing(self) -> Experience {
        self.complete(None)
    }
}

/// Discounted return `sum_i gamma^i * rewards[i]`.
pub fn compute_return(rewards: &[f64], gamma: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(ModelError::Domain(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let mut discount = 1.0;
    let mut acc = 0.0;
    for &r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeSpan {
    pub start: usize,
    pub end: usize,
    pub complete: bool,
}

/// Splits a done-flag stream into half-open episode spans.
pub fn segment_episodes(dones: &[bool]) -> Vec<EpisodeSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &done) in dones.iter().enumerate() {
        if done {
            spans.push(EpisodeSpan { start, end: i + 1, complete: true });
            start = i + 1;
        }
    }
    if start < dones.len() {
        spans.push(EpisodeSpan { start, end: dones.len(), complete: false });
    }
    spans
}

/// Turns a batch of steps into experiences, completing `carry` with the first
/// observation of the batch and holding back the final non-terminal step.
pub fn build_experiences(
    schema: &SessionSchema,
    batch: StepBatch,
    carry: Option<Carry>,
) -> Result<(Vec<Experience>, Option<Carry>), ModelError> {
    let batch = batch.conform(schema)?;
    let n = batch.n_samples as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut carry = carry;
    let mut next_t = carry.as_ref().map_or(0, |c| c.t + 1);
    for i in 0..n {
        let s = batch.obses.row(i);
        if let Some(c) = carry.take() {
            out.push(c.complete(Some(s.clone())));
        }
        let a = batch.actions.row(i);
        let r = batch.rewards.row(i);
        let frame = batch.frames.as_ref().map(|f| f.row(i));
        if batch.dones[i] {
            out.push(Experience { t: next_t, s, a, r, s_next: None, done: true, frame });
            next_t = 0;
        } else {
            carry = Some(Carry { t: next_t, s, a, r, frame });
            next_t += 1;
        }
    }
    Ok((out, carry))
}
