//! Scripted data sources: an analytic pendulum trajectory and random
//! schema-conforming episodes. No learning happens anywhere in this crate;
//! these stand in for a training loop.

use crate::model::{DType, Experience, SessionSchema, StepBatch, Tensor};
use rand::Rng;

pub fn pendulum_schema(has_frames: bool) -> SessionSchema {
    SessionSchema {
        steps: 0,
        obs_dim: vec![3],
        obs_type: DType::F32,
        action_dim: vec![1],
        action_type: DType::F32,
        reward_dim: 1,
        reward_type: DType::F32,
        has_frames,
    }
}

/// Small-angle pendulum `theta(t) = amp * cos(omega * t)` sampled at `dt`.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum {
    pub amp: f64,
    pub omega: f64,
    pub dt: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum { amp: 1.2, omega: 2.0, dt: 0.05 }
    }
}

impl Pendulum {
    pub fn theta(&self, k: u64) -> f64 {
        self.amp * (self.omega * k as f64 * self.dt).cos()
    }

    pub fn theta_dot(&self, k: u64) -> f64 {
        -self.amp * self.omega * (self.omega * k as f64 * self.dt).sin()
    }

    /// Observation `[sin θ, cos θ, θ̇]` at global step `k`.
    pub fn obs(&self, k: u64) -> [f32; 3] {
        let th = self.theta(k);
        [th.sin() as f32, th.cos() as f32, self.theta_dot(k) as f32]
    }

    /// Steps `start..start + n` as a batch; the reward is `-θ²` and the
    /// action the applied torque proxy `-θ̇`. `dones` is set every `episode_len` steps.
    pub fn batch(&self, start: u64, n: u32, episode_len: u64, frames: bool) -> StepBatch {
        let ks: Vec<u64> = (start..start + n as u64).collect();
        let obs: Vec<f32> = ks.iter().flat_map(|&k| self.obs(k)).collect();
        let act: Vec<f32> = ks.iter().map(|&k| -self.theta_dot(k) as f32).collect();
        let rew: Vec<f32> = ks.iter().map(|&k| -(self.theta(k).powi(2)) as f32).collect();
        let dones = ks.iter().map(|&k| (k + 1) % episode_len == 0).collect();
        let frames = frames.then(|| {
            let px: Vec<u8> = ks.iter().flat_map(|&k| self.render(k)).collect();
            Tensor::from_u8(vec![n, 16, 16, 3], &px).unwrap()
        });
        StepBatch {
            n_samples: n,
            obses: Tensor::from_f32(vec![n, 3], &obs).unwrap(),
            actions: Tensor::from_f32(vec![n, 1], &act).unwrap(),
            rewards: Tensor::from_f32(vec![n, 1], &rew).unwrap(),
            dones,
            frames,
        }
    }

    /// 16x16 RGB rendering: a bob drawn at the pendulum tip.
    pub fn render(&self, k: u64) -> Vec<u8> {
        let th = self.theta(k);
        let (cx, cy) = (7.5 + 6.0 * th.sin(), 2.0 + 6.0 * th.cos());
        let mut px = vec![20u8; 16 * 16 * 3];
        for y in 0..16 {
            for x in 0..16 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 < 4.0 {
                    let i = (y * 16 + x) * 3;
                    px[i] = 230;
                    px[i + 1] = 180;
                    px[i + 2] = 40;
                }
            }
        }
        px
    }
}

pub fn random_tensor(rng: &mut impl Rng, dtype: DType, shape: Vec<u32>) -> Tensor {
    let n = crate::model::shape_len(&shape);
    match dtype {
        DType::F32 => {
            let v: Vec<f32> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            Tensor::from_f32(shape, &v).unwrap()
        }
        DType::F64 => {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            Tensor::from_f64(shape, &v).unwrap()
        }
        DType::I32 => {
            let v: Vec<i32> = (0..n).map(|_| rng.random_range(-5..5)).collect();
            Tensor::from_i32(shape, &v).unwrap()
        }
        DType::U8 => {
            let mut v = vec![0u8; n];
            rng.fill(v.as_mut_slice());
            Tensor::from_u8(shape, &v).unwrap()
        }
    }
}

/// A chained episode of `len` steps; terminal when `terminal`, otherwise the
/// final step has a successor observation.
pub fn random_episode(rng: &mut impl Rng, schema: &SessionSchema, len: u32, terminal: bool) -> Vec<Experience> {
    let frame_hw = (rng.random_range(2..6u32), rng.random_range(2..6u32));
    let mut s = random_tensor(rng, schema.obs_type, schema.obs_dim.clone());
    (0..len)
        .map(|t| {
            let last = t + 1 == len;
            let done = last && terminal;
            let s_next = (!done).then(|| random_tensor(rng, schema.obs_type, schema.obs_dim.clone()));
            let e = Experience {
                t,
                s: s.clone(),
                a: random_tensor(rng, schema.action_type, schema.action_dim.clone()),
                r: random_tensor(rng, schema.reward_type, vec![schema.reward_dim]),
                s_next: s_next.clone(),
                done,
                frame: schema
                    .has_frames
                    .then(|| random_tensor(rng, DType::U8, vec![frame_hw.0, frame_hw.1, 3])),
            };
            if let Some(n) = s_next {
                s = n;
            }
            e
        })
        .collect()
}

/// Stacks a chained episode back into the batch a client would have sent.
pub fn episode_batch(exps: &[Experience]) -> StepBatch {
    let stack = |f: &dyn Fn(&Experience) -> Tensor| Tensor::stack(&exps.iter().map(f).collect::<Vec<_>>()).unwrap();
    let frames = exps.first().and_then(|e| e.frame.as_ref()).map(|_| stack(&|e| e.frame.clone().unwrap()));
    StepBatch {
        n_samples: exps.len() as u32,
        obses: stack(&|e| e.s.clone()),
        actions: stack(&|e| e.a.clone()),
        rewards: stack(&|e| e.r.clone()),
        dones: exps.iter().map(|e| e.done).collect(),
        frames,
    }
}
