//! Byte layout of chunk files, episode records and the manifest.
//!
//! Kept free of IO so the layouts can be pinned by golden tests.

use super::StorageError;
use crate::model::{shape_len, Experience, SessionSchema, Tensor};
use crate::wire::{self, ByteReader, WireError};
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use std::io::{Read, Write};

pub const CHUNK_MAGIC: [u8; 4] = *b"VZCH";
pub const CHUNK_VERSION: u8 = 1;
/// magic + version + codec + u32 record count
pub const CHUNK_HEADER_LEN: usize = 10;
pub const MANIFEST_MAGIC: [u8; 4] = *b"VZMF";
pub const MANIFEST_VERSION: u8 = 1;
/// stored_len + crc + episode_id + first_step + n_steps + flags
pub const RECORD_HEADER_LEN: usize = 25;

pub const FLAG_COMPLETE: u8 = 1 << 0;
pub const FLAG_LAST_SEGMENT: u8 = 1 << 1;
pub const FLAG_HAS_SUCCESSOR: u8 = 1 << 2;
pub const FLAG_HAS_FRAMES: u8 = 1 << 3;

/// Byte-level compression applied to each record body of a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum Codec {
    #[default]
    Identity = 0,
    Deflate = 1,
}

impl Codec {
    pub fn from_code(code: u8) -> Option<Codec> {
        match code {
            0 => Some(Codec::Identity),
            1 => Some(Codec::Deflate),
            _ => None,
        }
    }

    pub fn compress(self, body: Vec<u8>) -> Vec<u8> {
        match self {
            Codec::Identity => body,
            Codec::Deflate => {
                let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::fast());
                enc.write_all(&body).expect("in-memory write");
                enc.finish().expect("in-memory write")
            }
        }
    }

    pub fn decompress(self, stored: &[u8]) -> std::io::Result<Vec<u8>> {
        match self {
            Codec::Identity => Ok(stored.to_vec()),
            Codec::Deflate => {
                let mut out = Vec::new();
                ZlibDecoder::new(stored).read_to_end(&mut out)?;
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordMeta {
    pub stored_len: u32,
    pub crc: u32,
    pub episode_id: u64,
    pub first_step: u32,
    pub n_steps: u32,
    pub flags: u8,
}

impl RecordMeta {
    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }

    pub fn n_obs(&self) -> u32 {
        self.n_steps + self.has(FLAG_HAS_SUCCESSOR) as u32
    }

    fn identity_bytes(&self) -> [u8; 17] {
        let mut b = [0u8; 17];
        b[..8].copy_from_slice(&self.episode_id.to_le_bytes());
        b[8..12].copy_from_slice(&self.first_step.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_steps.to_le_bytes());
        b[16] = self.flags;
        b
    }

    pub fn parse(header: &[u8]) -> RecordMeta {
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        RecordMeta {
            stored_len: u32_at(0),
            crc: u32_at(4),
            episode_id: u64::from_le_bytes(header[8..16].try_into().unwrap()),
            first_step: u32_at(16),
            n_steps: u32_at(20),
            flags: header[24],
        }
    }

    /// Checksum over the identifying header fields and the stored body.
    pub fn checksum(&self, stored_body: &[u8]) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.identity_bytes());
        h.update(stored_body);
        h.finalize()
    }
}

/// Encodes consecutive steps of one episode as a record.
///
/// Successor observations are stored once: the obs block holds `s` of every
/// step plus, when known, `s_next` of the final step. `exps` must therefore
/// chain (`exps[i].s_next == Some(exps[i + 1].s)`).
pub fn encode_record(
    schema: &SessionSchema,
    episode_id: u64,
    exps: &[Experience],
    last_segment: bool,
    complete: bool,
    codec: Codec,
) -> Result<Vec<u8>, StorageError> {
    let first = exps
        .first()
        .ok_or_else(|| StorageError::InvalidInput("record needs at least one step".into()))?;
    for pair in exps.windows(2) {
        if pair[0].s_next.as_ref() != Some(&pair[1].s) {
            return Err(StorageError::InvalidInput(format!(
                "step {} successor does not match step {}",
                pair[0].t, pair[1].t
            )));
        }
    }
    let last = exps.last().unwrap();
    let n = exps.len() as u32;
    let mut flags = 0;
    if complete {
        flags |= FLAG_COMPLETE;
    }
    if last_segment {
        flags |= FLAG_LAST_SEGMENT;
    }
    if last.s_next.is_some() {
        flags |= FLAG_HAS_SUCCESSOR;
    }
    if schema.has_frames {
        flags |= FLAG_HAS_FRAMES;
    }

    let obs_bytes = schema.obs_len() * schema.obs_type.size();
    let mut body = Vec::with_capacity((exps.len() + 1) * obs_bytes + 64);
    let mut obs_dims = vec![n + last.s_next.is_some() as u32];
    obs_dims.extend_from_slice(&schema.obs_dim);
    wire::put_block_header(&mut body, schema.obs_type, &obs_dims);
    for e in exps {
        body.extend_from_slice(e.s.data());
    }
    if let Some(next) = &last.s_next {
        body.extend_from_slice(next.data());
    }
    let mut act_dims = vec![n];
    act_dims.extend_from_slice(&schema.action_dim);
    wire::put_block_header(&mut body, schema.action_type, &act_dims);
    for e in exps {
        body.extend_from_slice(e.a.data());
    }
    wire::put_block_header(&mut body, schema.reward_type, &[n, schema.reward_dim]);
    for e in exps {
        body.extend_from_slice(e.r.data());
    }
    let dones: Vec<bool> = exps.iter().map(|e| e.done).collect();
    body.extend_from_slice(&wire::pack_bits(&dones));
    if schema.has_frames {
        let frames: Vec<Tensor> = exps
            .iter()
            .map(|e| e.frame.clone().ok_or_else(|| StorageError::InvalidInput(format!("step {} lacks a frame", e.t))))
            .collect::<Result<_, _>>()?;
        let stacked = Tensor::stack(&frames).map_err(|e| StorageError::InvalidInput(format!("frames: {e}")))?;
        wire::put_tensor(&mut body, &stacked);
    }

    let stored = codec.compress(body);
    let mut meta = RecordMeta {
        stored_len: stored.len() as u32,
        crc: 0,
        episode_id,
        first_step: first.t,
        n_steps: n,
        flags,
    };
    meta.crc = meta.checksum(&stored);
    let mut out = Vec::with_capacity(RECORD_HEADER_LEN + stored.len());
    out.extend_from_slice(&meta.stored_len.to_le_bytes());
    out.extend_from_slice(&meta.crc.to_le_bytes());
    out.extend_from_slice(&meta.identity_bytes());
    out.extend_from_slice(&stored);
    Ok(out)
}

/// Random access into an uncompressed record body.
pub trait BodySource {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()>;
}

impl BodySource for [u8] {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        let start = offset as usize;
        let src = self
            .get(start..start + buf.len())
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "record body too short"))?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

/// A file region starting at `base`.
pub struct FileRegion<'a> {
    pub file: &'a std::fs::File,
    pub base: u64,
}

impl BodySource for FileRegion<'_> {
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        use std::os::unix::fs::FileExt;
        self.file.read_exact_at(buf, self.base + offset)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockLoc {
    data_start: u64,
    elem_bytes: u64,
}

fn read_header_at(src: &(impl BodySource + ?Sized), at: u64) -> Result<(wire::BlockHeader, u64), StorageError> {
    let mut head = [0u8; 2];
    src.read_at(at, &mut head)?;
    let mut dims_raw = vec![0u8; head[1] as usize * 4];
    src.read_at(at + 2, &mut dims_raw)?;
    let mut all = head.to_vec();
    all.extend_from_slice(&dims_raw);
    let h = wire::read_block_header(&mut ByteReader::new(&all)).map_err(|e| body_err(e.to_string()))?;
    let len = all.len() as u64;
    Ok((h, at + len))
}

fn body_err(detail: String) -> StorageError {
    StorageError::InvalidInput(detail)
}

/// Locations of the streams inside a record body, computed from block headers.
#[derive(Debug, Clone, Copy)]
pub struct BodyLayout {
    obs: BlockLoc,
    action: BlockLoc,
    reward: BlockLoc,
    dones_start: u64,
    frames: Option<(BlockLoc, [u32; 3])>,
}

impl BodyLayout {
    pub fn locate(
        src: &(impl BodySource + ?Sized),
        schema: &SessionSchema,
        meta: &RecordMeta,
    ) -> Result<BodyLayout, StorageError> {
        let n = meta.n_steps as u64;
        let check = |name: &str, h: &wire::BlockHeader, dtype, lead: u32, inner: &[u32]| {
            let mut want = vec![lead];
            want.extend_from_slice(inner);
            if h.dtype != dtype || h.dims != want {
                return Err(body_err(format!("{name} block {:?}{:?}, expected {dtype:?}{want:?}", h.dtype, h.dims)));
            }
            Ok(())
        };
        let (oh, obs_start) = read_header_at(src, 0)?;
        check("obs", &oh, schema.obs_type, meta.n_obs(), &schema.obs_dim)?;
        let obs_elem = (schema.obs_len() * schema.obs_type.size()) as u64;
        let (ah, act_start) = read_header_at(src, obs_start + obs_elem * meta.n_obs() as u64)?;
        check("action", &ah, schema.action_type, meta.n_steps, &schema.action_dim)?;
        let act_elem = (schema.action_len() * schema.action_type.size()) as u64;
        let (rh, rew_start) = read_header_at(src, act_start + act_elem * n)?;
        check("reward", &rh, schema.reward_type, meta.n_steps, &[schema.reward_dim])?;
        let rew_elem = (schema.reward_dim as usize * schema.reward_type.size()) as u64;
        let dones_start = rew_start + rew_elem * n;
        let frames = if meta.has(FLAG_HAS_FRAMES) {
            let (fh, frame_start) = read_header_at(src, dones_start + n.div_ceil(8))?;
            if fh.dims.len() != 4 || fh.dims[0] != meta.n_steps || fh.dims[3] != 3 {
                return Err(body_err(format!("frames block {:?}", fh.dims)));
            }
            let elem = shape_len(&fh.dims[1..]) as u64;
            Some((BlockLoc { data_start: frame_start, elem_bytes: elem }, [fh.dims[1], fh.dims[2], 3]))
        } else {
            None
        };
        Ok(BodyLayout {
            obs: BlockLoc { data_start: obs_start, elem_bytes: obs_elem },
            action: BlockLoc { data_start: act_start, elem_bytes: act_elem },
            reward: BlockLoc { data_start: rew_start, elem_bytes: rew_elem },
            dones_start,
            frames,
        })
    }

    /// Reads step `i` (record-local) without touching the other steps.
    pub fn read_step(
        &self,
        src: &(impl BodySource + ?Sized),
        schema: &SessionSchema,
        meta: &RecordMeta,
        i: u32,
    ) -> Result<Experience, StorageError> {
        let fetch = |loc: BlockLoc, k: u32| -> Result<Vec<u8>, StorageError> {
            let mut buf = vec![0u8; loc.elem_bytes as usize];
            src.read_at(loc.data_start + loc.elem_bytes * k as u64, &mut buf)?;
            Ok(buf)
        };
        let tensor = |dtype, dims: Vec<u32>, data| Tensor::new(dtype, dims, data).map_err(|e| body_err(e.to_string()));
        let s = tensor(schema.obs_type, schema.obs_dim.clone(), fetch(self.obs, i)?)?;
        let s_next = if i + 1 < meta.n_obs() {
            Some(tensor(schema.obs_type, schema.obs_dim.clone(), fetch(self.obs, i + 1)?)?)
        } else {
            None
        };
        let a = tensor(schema.action_type, schema.action_dim.clone(), fetch(self.action, i)?)?;
        let r = tensor(schema.reward_type, vec![schema.reward_dim], fetch(self.reward, i)?)?;
        let mut byte = [0u8; 1];
        src.read_at(self.dones_start + (i / 8) as u64, &mut byte)?;
        let done = byte[0] & (1 << (i % 8)) != 0;
        let frame = match self.frames {
            Some((loc, dims)) => Some(tensor(crate::model::DType::U8, dims.to_vec(), fetch(loc, i)?)?),
            None => None,
        };
        Ok(Experience { t: meta.first_step + i, s, a, r, s_next, done, frame })
    }
}

/// Decodes every step of a record body.
pub fn decode_body(schema: &SessionSchema, meta: &RecordMeta, body: &[u8]) -> Result<Vec<Experience>, StorageError> {
    let layout = BodyLayout::locate(body, schema, meta)?;
    (0..meta.n_steps).map(|i| layout.read_step(body, schema, meta, i)).collect()
}

pub fn chunk_header(codec: Codec, record_count: u32) -> [u8; CHUNK_HEADER_LEN] {
    let mut h = [0u8; CHUNK_HEADER_LEN];
    h[..4].copy_from_slice(&CHUNK_MAGIC);
    h[4] = CHUNK_VERSION;
    h[5] = codec as u8;
    h[6..10].copy_from_slice(&record_count.to_le_bytes());
    h
}

/// Returns (codec, record count) after checking magic and version.
pub fn parse_chunk_header(h: &[u8]) -> Result<(Codec, u32), String> {
    if h.len() < CHUNK_HEADER_LEN {
        return Err("short header".into());
    }
    if h[..4] != CHUNK_MAGIC {
        return Err(format!("bad magic {:02x?}", &h[..4]));
    }
    if h[4] != CHUNK_VERSION {
        return Err(format!("unsupported version {}", h[4]));
    }
    let codec = Codec::from_code(h[5]).ok_or_else(|| format!("unknown codec {}", h[5]))?;
    Ok((codec, u32::from_le_bytes(h[6..10].try_into().unwrap())))
}

/// Where one record of an episode lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRef {
    pub chunk_id: u64,
    pub offset: u64,
    pub first_step: u32,
    pub n_steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeEntry {
    pub episode_id: u64,
    pub n_steps: u32,
    pub complete: bool,
    pub return_sum: f64,
    pub wall_start: f64,
    pub wall_end: f64,
    pub segments: Vec<SegmentRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema: SessionSchema,
    /// Bumped on every manifest rewrite.
    pub generation: u64,
    pub next_chunk_id: u64,
    pub entries: Vec<EpisodeEntry>,
}

impl Manifest {
    pub fn new(schema: SessionSchema) -> Manifest {
        Manifest { schema, generation: 0, next_chunk_id: 0, entries: Vec::new() }
    }

    pub fn next_episode_id(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.episode_id + 1)
    }

    pub fn entry(&self, episode_id: u64) -> Option<&EpisodeEntry> {
        self.entries
            .binary_search_by_key(&episode_id, |e| e.episode_id)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&MANIFEST_MAGIC);
        b.push(MANIFEST_VERSION);
        wire::put_schema(&mut b, &self.schema);
        b.extend_from_slice(&self.generation.to_le_bytes());
        b.extend_from_slice(&self.next_chunk_id.to_le_bytes());
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&e.episode_id.to_le_bytes());
            b.extend_from_slice(&e.n_steps.to_le_bytes());
            b.push(e.complete as u8);
            b.extend_from_slice(&e.return_sum.to_le_bytes());
            b.extend_from_slice(&e.wall_start.to_le_bytes());
            b.extend_from_slice(&e.wall_end.to_le_bytes());
            b.extend_from_slice(&(e.segments.len() as u32).to_le_bytes());
            for s in &e.segments {
                b.extend_from_slice(&s.chunk_id.to_le_bytes());
                b.extend_from_slice(&s.offset.to_le_bytes());
                b.extend_from_slice(&s.first_step.to_le_bytes());
                b.extend_from_slice(&s.n_steps.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Manifest, StorageError> {
        let bad = |d: String| StorageError::Manifest(d);
        if bytes.len() < 9 {
            return Err(bad("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch".into()));
        }
        let mut r = ByteReader::new(body);
        let wire_err = |e: WireError| StorageError::Manifest(e.to_string());
        if r.bytes(4).map_err(wire_err)? != MANIFEST_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u8().map_err(wire_err)?;
        if version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let schema = wire::read_schema(&mut r).map_err(wire_err)?;
        let generation = r.u64().map_err(wire_err)?;
        let next_chunk_id = r.u64().map_err(wire_err)?;
        let count = r.u32().map_err(wire_err)?;
        let mut entries = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let episode_id = r.u64().map_err(wire_err)?;
            let n_steps = r.u32().map_err(wire_err)?;
            let complete = r.u8().map_err(wire_err)? != 0;
            let return_sum = r.f64().map_err(wire_err)?;
            let wall_start = r.f64().map_err(wire_err)?;
            let wall_end = r.f64().map_err(wire_err)?;
            let n_seg = r.u32().map_err(wire_err)?;
            let mut segments = Vec::with_capacity(n_seg.min(1 << 16) as usize);
            for _ in 0..n_seg {
                segments.push(SegmentRef {
                    chunk_id: r.u64().map_err(wire_err)?,
                    offset: r.u64().map_err(wire_err)?,
                    first_step: r.u32().map_err(wire_err)?,
                    n_steps: r.u32().map_err(wire_err)?,
                });
            }
            entries.push(EpisodeEntry { episode_id, n_steps, complete, return_sum, wall_start, wall_end, segments });
        }
        r.finish().map_err(wire_err)?;
        let m = Manifest { schema, generation, next_chunk_id, entries };
        m.check()?;
        Ok(m)
    }

    /// Structural invariants: strictly increasing ids, segments tile the steps,
    /// chunk ids below `next_chunk_id`.
    pub fn check(&self) -> Result<(), StorageError> {
        let bad = |d: String| Err(StorageError::Manifest(d));
        for pair in self.entries.windows(2) {
            if pair[1].episode_id <= pair[0].episode_id {
                return bad(format!("episode ids not increasing at {}", pair[1].episode_id));
            }
        }
        for e in &self.entries {
            let mut step = 0u32;
            for s in &e.segments {
                if s.first_step != step || s.n_steps == 0 {
                    return bad(format!("episode {} segments do not tile its steps", e.episode_id));
                }
                if s.chunk_id >= self.next_chunk_id {
                    return bad(format!("episode {} references unwritten chunk {}", e.episode_id, s.chunk_id));
                }
                step += s.n_steps;
            }
            if step != e.n_steps || e.n_steps == 0 {
                return bad(format!("episode {} step count mismatch", e.episode_id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DType;

    fn schema() -> SessionSchema {
        SessionSchema {
            steps: 0,
            obs_dim: vec![2],
            obs_type: DType::F32,
            action_dim: vec![1],
            action_type: DType::I32,
            reward_dim: 1,
            reward_type: DType::F32,
            has_frames: false,
        }
    }

    fn chain(n: u32, terminal: bool) -> Vec<Experience> {
        let obs = |k: u32| Tensor::from_f32(vec![2], &[k as f32, -(k as f32)]).unwrap();
        (0..n)
            .map(|t| {
                let last = t + 1 == n;
                Experience {
                    t,
                    s: obs(t),
                    a: Tensor::from_i32(vec![1], &[t as i32]).unwrap(),
                    r: Tensor::from_f32(vec![1], &[0.5]).unwrap(),
                    s_next: if last && terminal { None } else { Some(obs(t + 1)) },
                    done: last && terminal,
                    frame: None,
                }
            })
            .collect()
    }

    #[test]
    fn successor_obs_are_stored_once() {
        let s = schema();
        let exps = chain(5, false);
        let rec = encode_record(&s, 0, &exps, false, false, Codec::Identity).unwrap();
        let meta = RecordMeta::parse(&rec[..RECORD_HEADER_LEN]);
        assert_eq!(meta.n_obs(), 6);
        let body = &rec[RECORD_HEADER_LEN..];
        let (h, _) = read_header_at(body, 0).unwrap();
        assert_eq!(h.dims, vec![6, 2]);
        assert_eq!(decode_body(&s, &meta, body).unwrap(), exps);

        let exps = chain(5, true);
        let rec = encode_record(&s, 0, &exps, true, true, Codec::Identity).unwrap();
        let meta = RecordMeta::parse(&rec[..RECORD_HEADER_LEN]);
        assert_eq!(meta.n_obs(), 5);
        assert_eq!(decode_body(&s, &meta, &rec[RECORD_HEADER_LEN..]).unwrap(), exps);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let s = schema();
        let mut exps = chain(3, true);
        exps[0].s_next = Some(Tensor::from_f32(vec![2], &[9.0, 9.0]).unwrap());
        assert!(encode_record(&s, 0, &exps, true, true, Codec::Identity).is_err());
    }

    #[test]
    fn deflate_body_round_trips() {
        let s = schema();
        let exps = chain(40, true);
        let rec = encode_record(&s, 3, &exps, true, true, Codec::Deflate).unwrap();
        let meta = RecordMeta::parse(&rec[..RECORD_HEADER_LEN]);
        let stored = &rec[RECORD_HEADER_LEN..];
        assert_eq!(meta.checksum(stored), meta.crc);
        let body = Codec::Deflate.decompress(stored).unwrap();
        assert_eq!(decode_body(&s, &meta, &body).unwrap(), exps);
    }

    #[test]
    fn manifest_round_trip_and_checksum() {
        let mut m = Manifest::new(schema());
        m.next_chunk_id = 2;
        m.generation = 4;
        m.entries.push(EpisodeEntry {
            episode_id: 0,
            n_steps: 3,
            complete: true,
            return_sum: 1.5,
            wall_start: 10.0,
            wall_end: 11.0,
            segments: vec![
                SegmentRef { chunk_id: 0, offset: 10, first_step: 0, n_steps: 2 },
                SegmentRef { chunk_id: 1, offset: 10, first_step: 2, n_steps: 1 },
            ],
        });
        let bytes = m.encode();
        assert_eq!(Manifest::decode(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(Manifest::decode(&bad), Err(StorageError::Manifest(_))));
    }

    #[test]
    fn manifest_rejects_dangling_chunk() {
        let mut m = Manifest::new(schema());
        m.entries.push(EpisodeEntry {
            episode_id: 0,
            n_steps: 1,
            complete: true,
            return_sum: 0.0,
            wall_start: 0.0,
            wall_end: 0.0,
            segments: vec![SegmentRef { chunk_id: 0, offset: 10, first_step: 0, n_steps: 1 }],
        });
        assert!(m.check().is_err());
    }
}
