//! Append-only episode store.
//!
//! Producers call [`Store::enqueue_append`], which validates and pushes onto an
//! in-memory task queue and returns immediately. A single background commit
//! thread drains the queue, groups experiences into episode records, writes
//! them to immutable `chunk-<n>.vzc` files and then atomically replaces the
//! `manifest`. Readers work from [`Snapshot`]s of the last published manifest,
//! so an episode becomes visible only once the manifest naming it is durable.

mod commit;
pub mod fault;
pub mod format;
mod reader;

pub use fault::{CrashPoint, FaultPlan};
pub use format::{Codec, EpisodeEntry, Manifest, SegmentRef};
pub use reader::{open_snapshot, EpisodeSummary, Snapshot};

use crate::model::{Experience, ModelError, SessionSchema, Tensor};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest";
pub const MANIFEST_TMP_FILE: &str = "manifest.tmp";
pub const DEFAULT_QUEUE_CAPACITY: usize = 262_144;
pub const DEFAULT_CHUNK_TARGET: usize = 8 << 20;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode {0} not found")]
    NotFound(u64),
    #[error("step {t} out of range for episode {episode_id} with {n_steps} steps")]
    Bounds { episode_id: u64, t: u32, n_steps: u32 },
    #[error("corrupt chunk {chunk}: {detail}")]
    Corruption { chunk: String, detail: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("queue full ({depth} of {capacity} experiences pending)")]
    Backpressure { depth: usize, capacity: usize },
    #[error("store is read-only after a commit failure: {0}")]
    ReadOnly(String),
    #[error("store already exists at {0}")]
    Exists(PathBuf),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// Maximum number of experiences waiting for the commit thread.
    pub queue_capacity: usize,
    /// Records are packed into chunks of roughly this size; an open episode
    /// that outgrows it is written as a continuation record.
    pub chunk_target_bytes: usize,
    pub codec: Codec,
    /// Test hook: stop the commit thread dead at a chosen point.
    pub fault: Option<FaultPlan>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            chunk_target_bytes: DEFAULT_CHUNK_TARGET,
            codec: Codec::Identity,
            fault: None,
        }
    }
}

/// Counters for every disk write the store performs.
#[derive(Debug, Default)]
pub struct IoStats {
    pub chunk_writes: AtomicU64,
    pub manifest_writes: AtomicU64,
    pub fsyncs: AtomicU64,
    pub bytes_written: AtomicU64,
}

impl IoStats {
    /// Total write calls (chunks plus manifests).
    pub fn writes(&self) -> u64 {
        self.chunk_writes.load(Ordering::SeqCst) + self.manifest_writes.load(Ordering::SeqCst)
    }
}

/// Pauses the commit thread between tasks.
#[derive(Debug, Default)]
struct Gate {
    paused: Mutex<bool>,
    cv: Condvar,
}

impl Gate {
    fn set(&self, paused: bool) {
        *self.paused.lock().unwrap() = paused;
        self.cv.notify_all();
    }

    fn wait_open(&self) {
        let mut p = self.paused.lock().unwrap();
        while *p {
            p = self.cv.wait(p).unwrap();
        }
    }
}

struct Shared {
    dir: PathBuf,
    schema: SessionSchema,
    snapshot: RwLock<Snapshot>,
    depth: AtomicUsize,
    capacity: usize,
    failure: Mutex<Option<String>>,
    io: IoStats,
    gate: Gate,
}

impl Shared {
    fn failure(&self) -> Option<String> {
        self.failure.lock().unwrap().clone()
    }

    pub(crate) fn fail(&self, msg: String) {
        tracing::error!(dir = %self.dir.display(), "commit loop failed: {msg}");
        self.failure.lock().unwrap().get_or_insert(msg);
    }
}

/// Experiences pending durability.
#[derive(Debug)]
pub struct CommitTask {
    pub experiences: Vec<Experience>,
    pub enqueued_at: f64,
}

enum Task {
    Append(CommitTask),
    /// Commit everything queued before it; `close_open` also closes the
    /// in-progress episode as incomplete.
    Barrier { close_open: bool, reply: mpsc::SyncSender<Result<(), String>> },
}

/// Enqueue-side view of the stream, used to reject malformed appends before
/// they reach the queue.
#[derive(Debug, Clone, Default)]
struct IngestCursor {
    next_t: u32,
    last_successor: Option<Tensor>,
    needs_flush: bool,
    frame_shape: Option<Vec<u32>>,
}

impl IngestCursor {
    fn accept(&mut self, schema: &SessionSchema, e: &Experience) -> Result<(), StorageError> {
        let bad = |m: String| Err(StorageError::InvalidInput(m));
        schema.check_experience(e)?;
        if self.needs_flush {
            return bad("previous step has no successor; flush before appending".into());
        }
        if e.t != self.next_t {
            return bad(format!("expected step index {}, got {}", self.next_t, e.t));
        }
        if e.t > 0 && self.last_successor.as_ref() != Some(&e.s) {
            return bad(format!("step {} does not continue from the previous successor", e.t));
        }
        if e.done && e.s_next.is_some() {
            return bad(format!("terminal step {} carries a successor", e.t));
        }
        if e.t == 0 {
            self.frame_shape = None;
        }
        if let Some(f) = &e.frame {
            match &self.frame_shape {
                Some(shape) if shape.as_slice() != f.shape() => {
                    return bad(format!("frame shape {:?} changed within episode (was {shape:?})", f.shape()))
                }
                Some(_) => {}
                None => self.frame_shape = Some(f.shape().to_vec()),
            }
        }
        self.needs_flush = !e.done && e.s_next.is_none();
        self.next_t = if e.done { 0 } else { e.t + 1 };
        self.last_successor = e.s_next.clone();
        Ok(())
    }
}

pub(crate) fn now_secs() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Handle to a writable store. Dropping it commits any in-progress episode as
/// incomplete and joins the commit thread.
pub struct Store {
    shared: Arc<Shared>,
    tx: Mutex<Option<mpsc::Sender<Task>>>,
    cursor: Mutex<IngestCursor>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Store {
    /// Creates a new store in `dir` (created if missing) and writes an empty manifest.
    pub fn create(dir: impl AsRef<Path>, schema: SessionSchema, opts: StoreOptions) -> Result<Store, StorageError> {
        schema.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StorageError::Exists(dir.to_path_buf()));
        }
        let manifest = Manifest::new(schema);
        let io = IoStats::default();
        commit::write_manifest_atomic(dir, &manifest, &io)?;
        Store::start(dir, manifest, opts, io)
    }

    /// Reopens an existing store for writing. Leftovers of an interrupted
    /// commit are discarded.
    pub fn open(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Store, StorageError> {
        let dir = dir.as_ref();
        let tmp = dir.join(MANIFEST_TMP_FILE);
        if tmp.exists() {
            fs::remove_file(tmp)?;
        }
        let snap = open_snapshot(dir)?;
        let manifest = Manifest::clone(snap.manifest());
        Store::start(dir, manifest, opts, IoStats::default())
    }

    fn start(dir: &Path, manifest: Manifest, opts: StoreOptions, io: IoStats) -> Result<Store, StorageError> {
        let shared = Arc::new(Shared {
            dir: dir.to_path_buf(),
            schema: manifest.schema.clone(),
            snapshot: RwLock::new(Snapshot::new(dir.to_path_buf(), Arc::new(manifest.clone()))),
            depth: AtomicUsize::new(0),
            capacity: opts.queue_capacity,
            failure: Mutex::new(None),
            io,
            gate: Gate::default(),
        });
        let (tx, rx) = mpsc::channel();
        let worker = commit::spawn(shared.clone(), rx, manifest, opts)?;
        Ok(Store {
            shared,
            tx: Mutex::new(Some(tx)),
            cursor: Mutex::new(IngestCursor::default()),
            worker: Mutex::new(Some(worker)),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.shared.dir
    }

    pub fn schema(&self) -> &SessionSchema {
        &self.shared.schema
    }

    pub fn io_stats(&self) -> &IoStats {
        &self.shared.io
    }

    /// Experiences enqueued but not yet taken by the commit thread.
    pub fn queue_depth(&self) -> usize {
        self.shared.depth.load(Ordering::SeqCst)
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity
    }

    /// Set when the commit thread has stopped after an error.
    pub fn failure(&self) -> Option<String> {
        self.shared.failure()
    }

    pub fn pause_commits(&self) {
        self.shared.gate.set(true);
    }

    pub fn resume_commits(&self) {
        self.shared.gate.set(false);
    }

    /// Snapshot of the last published manifest.
    pub fn snapshot(&self) -> Snapshot {
        self.shared.snapshot.read().unwrap().clone()
    }

    /// Validates and enqueues `experiences`, returning the queue depth. Never
    /// touches the disk. The whole batch is accepted or rejected.
    pub fn enqueue_append(&self, experiences: Vec<Experience>) -> Result<usize, StorageError> {
        if let Some(msg) = self.shared.failure() {
            return Err(StorageError::ReadOnly(msg));
        }
        let mut cursor = self.cursor.lock().unwrap();
        let mut next = cursor.clone();
        for e in &experiences {
            next.accept(&self.shared.schema, e)?;
        }
        let n = experiences.len();
        if n == 0 {
            return Ok(self.queue_depth());
        }
        let depth = self.reserve(n)?;
        let task = Task::Append(CommitTask { experiences, enqueued_at: now_secs() });
        if self.send(task).is_err() {
            self.shared.depth.fetch_sub(n, Ordering::SeqCst);
            return Err(self.closed_error());
        }
        *cursor = next;
        Ok(depth)
    }

    fn reserve(&self, n: usize) -> Result<usize, StorageError> {
        let cap = self.shared.capacity;
        let mut cur = self.shared.depth.load(Ordering::SeqCst);
        loop {
            if cur + n > cap {
                return Err(StorageError::Backpressure { depth: cur, capacity: cap });
            }
            match self.shared.depth.compare_exchange(cur, cur + n, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(cur + n),
                Err(actual) => cur = actual,
            }
        }
    }

    fn send(&self, task: Task) -> Result<(), ()> {
        match self.tx.lock().unwrap().as_ref() {
            Some(tx) => tx.send(task).map_err(|_| ()),
            None => Err(()),
        }
    }

    fn closed_error(&self) -> StorageError {
        StorageError::ReadOnly(self.shared.failure().unwrap_or_else(|| "commit thread stopped".into()))
    }

    fn barrier(&self, close_open: bool) -> Result<(), StorageError> {
        let (reply, wait) = mpsc::sync_channel(1);
        self.send(Task::Barrier { close_open, reply }).map_err(|_| self.closed_error())?;
        match wait.recv() {
            Ok(Ok(())) => Ok(()),
            Ok(Err(msg)) => Err(StorageError::ReadOnly(msg)),
            Err(_) => Err(self.closed_error()),
        }
    }

    /// Blocks until everything enqueued so far is committed. The in-progress
    /// episode stays open.
    pub fn sync(&self) -> Result<(), StorageError> {
        self.barrier(false)
    }

    /// Commits everything enqueued so far and closes the in-progress episode
    /// as an incomplete record. Later appends start a new episode at step 0.
    pub fn flush(&self) -> Result<(), StorageError> {
        let mut cursor = self.cursor.lock().unwrap();
        self.barrier(true)?;
        *cursor = IngestCursor::default();
        Ok(())
    }

    /// Flushes and stops the commit thread.
    pub fn close(self) -> Result<(), StorageError> {
        let res = if self.failure().is_none() { self.flush() } else { Ok(()) };
        self.shutdown();
        res
    }

    fn shutdown(&self) {
        self.shared.gate.set(false);
        self.tx.lock().unwrap().take();
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.shared.dir).finish_non_exhaustive()
    }
}
