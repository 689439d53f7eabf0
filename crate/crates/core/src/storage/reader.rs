use super::commit::chunk_file_name;
use super::format::{self, BodyLayout, FileRegion, Manifest, RecordMeta, SegmentRef, CHUNK_HEADER_LEN, RECORD_HEADER_LEN};
use super::{StorageError, MANIFEST_FILE};
use crate::model::{Episode, Experience, SessionSchema};
use serde::Serialize;
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub id: u64,
    pub n_steps: u32,
    pub complete: bool,
    pub return_sum: f64,
    pub duration: f64,
    pub wall_start: f64,
    pub wall_end: f64,
}

/// An immutable view of the store as of one manifest generation.
#[derive(Debug, Clone)]
pub struct Snapshot {
    dir: Arc<PathBuf>,
    manifest: Arc<Manifest>,
}

/// Opens a read-only snapshot of the store in `dir` from its manifest on disk.
pub fn open_snapshot(dir: impl AsRef<Path>) -> Result<Snapshot, StorageError> {
    let dir = dir.as_ref();
    let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    let manifest = Manifest::decode(&bytes)?;
    let snap = Snapshot::new(dir.to_path_buf(), Arc::new(manifest));
    snap.check_references()?;
    Ok(snap)
}

impl Snapshot {
    pub(crate) fn new(dir: PathBuf, manifest: Arc<Manifest>) -> Snapshot {
        Snapshot { dir: Arc::new(dir), manifest }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Arc<Manifest> {
        &self.manifest
    }

    pub fn schema(&self) -> &SessionSchema {
        &self.manifest.schema
    }

    pub fn generation(&self) -> u64 {
        self.manifest.generation
    }

    pub fn episode_count(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn list_episodes(&self) -> Vec<EpisodeSummary> {
        self.manifest
            .entries
            .iter()
            .map(|e| EpisodeSummary {
                id: e.episode_id,
                n_steps: e.n_steps,
                complete: e.complete,
                return_sum: e.return_sum,
                duration: e.wall_end - e.wall_start,
                wall_start: e.wall_start,
                wall_end: e.wall_end,
            })
            .collect()
    }

    fn chunk_path(&self, chunk_id: u64) -> PathBuf {
        self.dir.join(chunk_file_name(chunk_id))
    }

    fn corrupt(&self, chunk_id: u64, detail: impl Into<String>) -> StorageError {
        StorageError::Corruption { chunk: chunk_file_name(chunk_id), detail: detail.into() }
    }

    fn open_chunk(&self, chunk_id: u64) -> Result<(File, format::Codec), StorageError> {
        let file = File::open(self.chunk_path(chunk_id)).map_err(|e| self.corrupt(chunk_id, format!("open: {e}")))?;
        let mut head = [0u8; CHUNK_HEADER_LEN];
        file.read_exact_at(&mut head, 0).map_err(|e| self.corrupt(chunk_id, format!("header: {e}")))?;
        let (codec, _) = format::parse_chunk_header(&head).map_err(|d| self.corrupt(chunk_id, d))?;
        Ok((file, codec))
    }

    fn record_meta(&self, file: &File, seg: &SegmentRef, episode_id: u64) -> Result<RecordMeta, StorageError> {
        let mut head = [0u8; RECORD_HEADER_LEN];
        file.read_exact_at(&mut head, seg.offset)
            .map_err(|e| self.corrupt(seg.chunk_id, format!("record header at {}: {e}", seg.offset)))?;
        let meta = RecordMeta::parse(&head);
        if meta.episode_id != episode_id || meta.first_step != seg.first_step || meta.n_steps != seg.n_steps {
            return Err(self.corrupt(seg.chunk_id, format!("record at {} does not match manifest", seg.offset)));
        }
        Ok(meta)
    }

    /// Reads and checksums one record, returning its uncompressed body.
    fn read_record(&self, seg: &SegmentRef, episode_id: u64) -> Result<(RecordMeta, Vec<u8>), StorageError> {
        let (file, codec) = self.open_chunk(seg.chunk_id)?;
        let meta = self.record_meta(&file, seg, episode_id)?;
        let mut stored = vec![0u8; meta.stored_len as usize];
        file.read_exact_at(&mut stored, seg.offset + RECORD_HEADER_LEN as u64)
            .map_err(|e| self.corrupt(seg.chunk_id, format!("record body: {e}")))?;
        if meta.checksum(&stored) != meta.crc {
            return Err(self.corrupt(seg.chunk_id, format!("checksum mismatch in record at offset {}", seg.offset)));
        }
        let body = codec
            .decompress(&stored)
            .map_err(|e| self.corrupt(seg.chunk_id, format!("decompress: {e}")))?;
        Ok((meta, body))
    }

    pub fn read_episode(&self, id: u64) -> Result<Episode, StorageError> {
        let entry = self.manifest.entry(id).ok_or(StorageError::NotFound(id))?;
        let mut experiences = Vec::with_capacity(entry.n_steps as usize);
        for seg in &entry.segments {
            let (meta, body) = self.read_record(seg, id)?;
            let steps = format::decode_body(self.schema(), &meta, &body).map_err(|e| match e {
                StorageError::InvalidInput(d) => self.corrupt(seg.chunk_id, d),
                other => other,
            })?;
            experiences.extend(steps);
        }
        Ok(Episode {
            id,
            experiences,
            complete: entry.complete,
            wall_start: entry.wall_start,
            wall_end: entry.wall_end,
        })
    }

    /// Reads the single step `t` of an episode by offset arithmetic into its
    /// record; only that step's bytes are read for uncompressed chunks.
    pub fn read_frame(&self, id: u64, t: u32) -> Result<Experience, StorageError> {
        let entry = self.manifest.entry(id).ok_or(StorageError::NotFound(id))?;
        if t >= entry.n_steps {
            return Err(StorageError::Bounds { episode_id: id, t, n_steps: entry.n_steps });
        }
        let seg = entry
            .segments
            .iter()
            .find(|s| t >= s.first_step && t < s.first_step + s.n_steps)
            .expect("manifest segments tile the episode");
        let local = t - seg.first_step;
        let (file, codec) = self.open_chunk(seg.chunk_id)?;
        let as_corrupt = |e: StorageError| match e {
            StorageError::InvalidInput(d) | StorageError::Model(crate::model::ModelError::Domain(d)) => {
                self.corrupt(seg.chunk_id, d)
            }
            StorageError::Io(io) => self.corrupt(seg.chunk_id, io.to_string()),
            other => other,
        };
        match codec {
            format::Codec::Identity => {
                let meta = self.record_meta(&file, seg, id)?;
                let region = FileRegion { file: &file, base: seg.offset + RECORD_HEADER_LEN as u64 };
                let layout = BodyLayout::locate(&region, self.schema(), &meta).map_err(as_corrupt)?;
                layout.read_step(&region, self.schema(), &meta, local).map_err(as_corrupt)
            }
            _ => {
                let (meta, body) = self.read_record(seg, id)?;
                let layout = BodyLayout::locate(body.as_slice(), self.schema(), &meta).map_err(as_corrupt)?;
                layout.read_step(body.as_slice(), self.schema(), &meta, local).map_err(as_corrupt)
            }
        }
    }

    /// Cheap structural check: every referenced chunk exists with a valid
    /// header and every referenced record header matches its manifest entry.
    pub fn check_references(&self) -> Result<(), StorageError> {
        for e in &self.manifest.entries {
            for seg in &e.segments {
                let (file, _) = self.open_chunk(seg.chunk_id)?;
                self.record_meta(&file, seg, e.episode_id)?;
            }
        }
        Ok(())
    }

    /// Full check: every record of every episode checksums and decodes.
    pub fn validate(&self) -> Result<(), StorageError> {
        for e in &self.manifest.entries {
            let ep = self.read_episode(e.episode_id)?;
            if ep.experiences.len() != e.n_steps as usize {
                return Err(StorageError::Manifest(format!("episode {} step count", e.episode_id)));
            }
        }
        Ok(())
    }
}
