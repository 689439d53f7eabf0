//! Telemetry backend for reinforcement-learning training runs.
//!
//! A training loop streams per-step batches over a small binary protocol
//! ([`wire`]); the [`server`] turns them into experiences ([`model`]) and
//! hands them to the asynchronous episode [`storage`] engine. Dashboards query
//! metrics ([`analytics`]), single frames and a t-SNE [`projection`] of the
//! replay buffer over HTTP.

pub mod analytics;
pub mod model;
pub mod projection;
pub mod server;
pub mod storage;
pub mod synth;
pub mod wire;

pub use model::{
    build_experiences, compute_return, segment_episodes, Carry, DType, Episode, EpisodeSpan, Experience, ModelError,
    SessionSchema, StepBatch, Tensor,
};
pub use storage::{Snapshot, StorageError, Store, StoreOptions};
