//! The background commit thread.

use super::fault::{CrashPoint, FaultState, Injected};
use super::format::{self, EpisodeEntry, Manifest, SegmentRef};
use super::{CommitTask, IoStats, Shared, Snapshot, StorageError, StoreOptions, Task, MANIFEST_FILE, MANIFEST_TMP_FILE};
use crate::model::{compute_return, Experience};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::thread::JoinHandle;

enum CommitError {
    Io(io::Error),
    Crash(Injected),
    Invalid(StorageError),
}

impl From<io::Error> for CommitError {
    fn from(e: io::Error) -> Self {
        CommitError::Io(e)
    }
}

impl From<Injected> for CommitError {
    fn from(e: Injected) -> Self {
        CommitError::Crash(e)
    }
}

impl CommitError {
    fn describe(&self) -> String {
        match self {
            CommitError::Io(e) => format!("I/O error: {e}"),
            CommitError::Crash(Injected(p)) => format!("injected crash at {p:?}"),
            CommitError::Invalid(e) => e.to_string(),
        }
    }
}

fn sync_dir(dir: &Path, io: &IoStats) -> io::Result<()> {
    File::open(dir)?.sync_all()?;
    io.fsyncs.fetch_add(1, Ordering::SeqCst);
    Ok(())
}

fn write_manifest(dir: &Path, m: &Manifest, io: &IoStats, fault: &FaultState) -> Result<(), CommitError> {
    let bytes = m.encode();
    let tmp = dir.join(MANIFEST_TMP_FILE);
    let mut f = File::create(&tmp)?;
    if fault.hit(CrashPoint::MidManifestWrite) {
        f.write_all(&bytes[..bytes.len() / 2])?;
        return Err(Injected(CrashPoint::MidManifestWrite).into());
    }
    f.write_all(&bytes)?;
    io.manifest_writes.fetch_add(1, Ordering::SeqCst);
    io.bytes_written.fetch_add(bytes.len() as u64, Ordering::SeqCst);
    fault.check(CrashPoint::AfterManifestTempWrite)?;
    f.sync_all()?;
    io.fsyncs.fetch_add(1, Ordering::SeqCst);
    fault.check(CrashPoint::AfterManifestTempSync)?;
    fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
    fault.check(CrashPoint::AfterManifestRename)?;
    sync_dir(dir, io)?;
    Ok(())
}

/// Writes `m` to `manifest.tmp`, fsyncs and renames it over `manifest`.
pub(super) fn write_manifest_atomic(dir: &Path, m: &Manifest, io: &IoStats) -> Result<(), StorageError> {
    write_manifest(dir, m, io, &FaultState::new(None)).map_err(|e| match e {
        CommitError::Io(e) => StorageError::Io(e),
        other => StorageError::InvalidInput(other.describe()),
    })
}

pub(super) fn spawn(
    shared: Arc<Shared>,
    rx: Receiver<Task>,
    manifest: Manifest,
    opts: StoreOptions,
) -> io::Result<JoinHandle<()>> {
    let next_episode_id = manifest.next_episode_id();
    let fault = FaultState::new(opts.fault);
    let mut lp = CommitLoop {
        shared,
        manifest,
        opts,
        open: None,
        next_episode_id,
        pending: Vec::new(),
        finished: Vec::new(),
        fault,
    };
    std::thread::Builder::new().name("vizarel-commit".into()).spawn(move || lp.run(rx))
}

struct OpenEpisode {
    id: u64,
    buffer: Vec<Experience>,
    buffered_bytes: usize,
    written_steps: u32,
    segments: Vec<SegmentRef>,
    rewards: Vec<f64>,
    wall_start: f64,
    wall_end: f64,
}

struct PendingRecord {
    episode_id: u64,
    first_step: u32,
    n_steps: u32,
    bytes: Vec<u8>,
}

struct CommitLoop {
    shared: Arc<Shared>,
    manifest: Manifest,
    opts: StoreOptions,
    open: Option<OpenEpisode>,
    next_episode_id: u64,
    pending: Vec<PendingRecord>,
    finished: Vec<EpisodeEntry>,
    fault: FaultState,
}

fn experience_bytes(e: &Experience) -> usize {
    e.s.data().len() + e.a.data().len() + e.r.data().len() + e.frame.as_ref().map_or(0, |f| f.data().len())
}

impl CommitLoop {
    fn run(&mut self, rx: Receiver<Task>) {
        while let Ok(first) = rx.recv() {
            self.shared.gate.wait_open();
            let mut tasks = vec![first];
            tasks.extend(rx.try_iter());
            if let Err(e) = self.process(tasks) {
                self.shared.fail(e.describe());
                return;
            }
        }
        // All senders gone: shutdown. Keep what is buffered.
        self.close_open();
        if let Err(e) = self.commit() {
            self.shared.fail(e.describe());
        }
    }

    fn process(&mut self, tasks: Vec<Task>) -> Result<(), CommitError> {
        let mut tasks = tasks.into_iter();
        while let Some(task) = tasks.next() {
            match task {
                Task::Append(ct) => {
                    self.shared.depth.fetch_sub(ct.experiences.len(), Ordering::SeqCst);
                    self.absorb(ct)?;
                }
                Task::Barrier { close_open, reply } => {
                    if close_open {
                        self.close_open();
                    }
                    match self.commit() {
                        Ok(()) => {
                            let _ = reply.send(Ok(()));
                        }
                        Err(e) => {
                            // record before replying so callers observe read-only state
                            self.shared.fail(e.describe());
                            let _ = reply.send(Err(e.describe()));
                            for t in tasks {
                                if let Task::Barrier { reply, .. } = t {
                                    let _ = reply.send(Err(e.describe()));
                                }
                            }
                            return Err(e);
                        }
                    }
                }
            }
        }
        self.commit()
    }

    fn absorb(&mut self, task: CommitTask) -> Result<(), CommitError> {
        for e in task.experiences {
            let open = self.open.get_or_insert_with(|| {
                let id = self.next_episode_id;
                self.next_episode_id += 1;
                OpenEpisode {
                    id,
                    buffer: Vec::new(),
                    buffered_bytes: 0,
                    written_steps: 0,
                    segments: Vec::new(),
                    rewards: Vec::new(),
                    wall_start: task.enqueued_at,
                    wall_end: task.enqueued_at,
                }
            });
            open.wall_end = task.enqueued_at;
            open.rewards.push(e.scalar_reward());
            open.buffered_bytes += experience_bytes(&e);
            let done = e.done;
            let has_successor = e.s_next.is_some();
            open.buffer.push(e);
            if done {
                self.finish(true)?;
            } else if has_successor && open.buffered_bytes >= self.opts.chunk_target_bytes {
                let bytes = format::encode_record(
                    &self.shared.schema,
                    open.id,
                    &open.buffer,
                    false,
                    false,
                    self.opts.codec,
                )
                .map_err(CommitError::Invalid)?;
                let n = open.buffer.len() as u32;
                self.pending.push(PendingRecord { episode_id: open.id, first_step: open.written_steps, n_steps: n, bytes });
                open.written_steps += n;
                open.buffer.clear();
                open.buffered_bytes = 0;
            }
        }
        Ok(())
    }

    fn finish(&mut self, complete: bool) -> Result<(), CommitError> {
        let Some(open) = self.open.take() else { return Ok(()) };
        let n_buffered = open.buffer.len() as u32;
        if n_buffered > 0 {
            let bytes =
                format::encode_record(&self.shared.schema, open.id, &open.buffer, true, complete, self.opts.codec)
                    .map_err(CommitError::Invalid)?;
            self.pending.push(PendingRecord {
                episode_id: open.id,
                first_step: open.written_steps,
                n_steps: n_buffered,
                bytes,
            });
        }
        let return_sum = compute_return(&open.rewards, 1.0).expect("gamma = 1 is in range");
        self.finished.push(EpisodeEntry {
            episode_id: open.id,
            n_steps: open.written_steps + n_buffered,
            complete,
            return_sum,
            wall_start: open.wall_start,
            wall_end: open.wall_end,
            segments: open.segments,
        });
        Ok(())
    }

    fn close_open(&mut self) {
        if self.open.is_some() {
            // Records of a closed episode cannot fail to encode: the chain was
            // validated on enqueue.
            if let Err(e) = self.finish(false) {
                self.shared.fail(e.describe());
            }
        }
    }

    fn commit(&mut self) -> Result<(), CommitError> {
        if self.pending.is_empty() && self.finished.is_empty() {
            return Ok(());
        }
        let dir = self.shared.dir.clone();
        let io = &self.shared.io;

        // Pack records into chunks.
        let mut chunks: Vec<(u64, Vec<u8>, u32)> = Vec::new();
        let mut placed: Vec<(u64, SegmentRef)> = Vec::new();
        for rec in self.pending.drain(..) {
            let start_new = match chunks.last() {
                None => true,
                Some((_, buf, _)) => buf.len() + rec.bytes.len() > self.opts.chunk_target_bytes,
            };
            if start_new {
                let id = self.manifest.next_chunk_id;
                self.manifest.next_chunk_id += 1;
                chunks.push((id, format::chunk_header(self.opts.codec, 0).to_vec(), 0));
            }
            let (id, buf, count) = chunks.last_mut().unwrap();
            let seg = SegmentRef {
                chunk_id: *id,
                offset: buf.len() as u64,
                first_step: rec.first_step,
                n_steps: rec.n_steps,
            };
            buf.extend_from_slice(&rec.bytes);
            *count += 1;
            placed.push((rec.episode_id, seg));
        }

        for (id, mut buf, count) in chunks {
            buf[6..10].copy_from_slice(&count.to_le_bytes());
            let mut f = File::create(dir.join(chunk_file_name(id)))?;
            if self.fault.hit(CrashPoint::MidChunkWrite) {
                f.write_all(&buf[..buf.len() / 2])?;
                return Err(Injected(CrashPoint::MidChunkWrite).into());
            }
            f.write_all(&buf)?;
            io.chunk_writes.fetch_add(1, Ordering::SeqCst);
            io.bytes_written.fetch_add(buf.len() as u64, Ordering::SeqCst);
            self.fault.check(CrashPoint::AfterChunkWrite)?;
            f.sync_all()?;
            io.fsyncs.fetch_add(1, Ordering::SeqCst);
            self.fault.check(CrashPoint::AfterChunkSync)?;
        }
        sync_dir(&dir, io)?;

        for (episode_id, seg) in placed {
            if let Some(entry) = self.finished.iter_mut().find(|e| e.episode_id == episode_id) {
                entry.segments.push(seg);
            } else if let Some(open) = self.open.as_mut().filter(|o| o.id == episode_id) {
                open.segments.push(seg);
            } else {
                unreachable!("record for episode {episode_id} has no owner");
            }
        }

        if !self.finished.is_empty() {
            self.manifest.entries.append(&mut self.finished);
            self.manifest.generation += 1;
            write_manifest(&dir, &self.manifest, io, &self.fault)?;
            let snap = Snapshot::new(dir.clone(), Arc::new(self.manifest.clone()));
            *self.shared.snapshot.write().unwrap() = snap;
        }
        self.fault.next_commit();
        Ok(())
    }
}

pub fn chunk_file_name(id: u64) -> String {
    format!("chunk-{id}.vzc")
}
