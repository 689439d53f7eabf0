//! Binary encodings shared by the ingestion protocol and the chunk files.
//!
//! All integers are little-endian. A message is a 14-byte header
//! (`"VZRL"`, version, type, `u64` payload length) followed by the payload.
//! See `FORMAT.md` at the repository root for the byte-level layout.

use crate::model::{DType, ModelError, SessionSchema, StepBatch, Tensor};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"VZRL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Upper bound on a single payload; larger length fields are treated as corrupt framing.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated input: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload length {0} exceeds limit")]
    PayloadTooLarge(u64),
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl WireError {
    /// Framing errors leave the byte stream unsynchronised; the connection must close.
    pub fn is_framing(&self) -> bool {
        matches!(
            self,
            WireError::BadMagic(_)
                | WireError::UnsupportedVersion(_)
                | WireError::UnknownType(_)
                | WireError::Truncated { .. }
                | WireError::PayloadTooLarge(_)
        )
    }
}

/// Cursor over a byte slice with bounds-checked little-endian reads.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Payload(format!(
                "truncated: need {} bytes, have {}",
                self.pos.saturating_add(n),
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn dtype(&mut self) -> Result<DType, WireError> {
        let code = self.u8()?;
        DType::from_code(code).ok_or_else(|| WireError::Payload(format!("unknown dtype code {code}")))
    }

    pub fn finish(&self) -> Result<(), WireError> {
        if self.remaining() != 0 {
            return Err(WireError::Payload(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Header of a tensor block: dtype code, rank and dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub dtype: DType,
    pub dims: Vec<u32>,
}

impl BlockHeader {
    pub fn encoded_len(&self) -> usize {
        2 + 4 * self.dims.len()
    }

    pub fn data_len(&self) -> usize {
        crate::model::shape_len(&self.dims).saturating_mul(self.dtype.size())
    }
}

pub fn put_block_header(buf: &mut Vec<u8>, dtype: DType, dims: &[u32]) {
    buf.push(dtype.code());
    buf.push(dims.len() as u8);
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
}

pub fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_block_header(buf, t.dtype(), t.shape());
    buf.extend_from_slice(t.data());
}

pub fn read_block_header(r: &mut ByteReader<'_>) -> Result<BlockHeader, WireError> {
    let dtype = r.dtype()?;
    let ndim = r.u8()? as usize;
    let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    Ok(BlockHeader { dtype, dims })
}

pub fn read_tensor(r: &mut ByteReader<'_>) -> Result<Tensor, WireError> {
    let h = read_block_header(r)?;
    let len = crate::model::shape_len(&h.dims).saturating_mul(h.dtype.size());
    if len > r.remaining() {
        return Err(WireError::Payload(format!(
            "tensor block {:?}{:?} needs {len} bytes, {} remain",
            h.dtype,
            h.dims,
            r.remaining()
        )));
    }
    let data = r.bytes(len)?.to_vec();
    Ok(Tensor::new(h.dtype, h.dims, data)?)
}

/// Packs flags LSB-first, eight per byte.
pub fn pack_bits(flags: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; flags.len().div_ceil(8)];
    for (i, &f) in flags.iter().enumerate() {
        if f {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

pub fn put_schema(buf: &mut Vec<u8>, s: &SessionSchema) {
    buf.extend_from_slice(&s.steps.to_le_bytes());
    put_block_header(buf, s.obs_type, &s.obs_dim);
    put_block_header(buf, s.action_type, &s.action_dim);
    buf.push(s.reward_type.code());
    buf.extend_from_slice(&s.reward_dim.to_le_bytes());
    buf.push(s.has_frames as u8);
}

/// Reads a schema without validating it; callers decide how to report an
/// invalid one.
pub fn read_schema(r: &mut ByteReader<'_>) -> Result<SessionSchema, WireError> {
    let steps = r.u64()?;
    let obs = read_block_header(r)?;
    let act = read_block_header(r)?;
    let reward_type = r.dtype()?;
    let reward_dim = r.u32()?;
    let has_frames = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(WireError::Payload(format!("has_frames flag {v}"))),
    };
    Ok(SessionSchema {
        steps,
        obs_dim: obs.dims,
        obs_type: obs.dtype,
        action_dim: act.dims,
        action_type: act.dtype,
        reward_dim,
        reward_type,
        has_frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Init = 0x01,
    LogState = 0x02,
    Flush = 0x03,
    Ack = 0x06,
    Error = 0x07,
}

impl MessageKind {
    pub fn from_code(code: u8) -> Option<MessageKind> {
        Some(match code {
            0x01 => MessageKind::Init,
            0x02 => MessageKind::LogState,
            0x03 => MessageKind::Flush,
            0x06 => MessageKind::Ack,
            0x07 => MessageKind::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

/// Error categories carried in ERROR payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Protocol = 1,
    Schema = 2,
    Shape = 3,
    Backpressure = 4,
    Storage = 5,
    Internal = 6,
}

impl ErrorCode {
    pub fn from_code(code: u8) -> ErrorCode {
        match code {
            1 => ErrorCode::Protocol,
            2 => ErrorCode::Schema,
            3 => ErrorCode::Shape,
            4 => ErrorCode::Backpressure,
            5 => ErrorCode::Storage,
            _ => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub retry_after_ms: u32,
    pub message: String,
}

impl Message {
    pub fn new(kind: MessageKind, payload: Vec<u8>) -> Message {
        Message { kind, payload }
    }

    pub fn init(schema: &SessionSchema) -> Message {
        let mut p = Vec::new();
        put_schema(&mut p, schema);
        Message::new(MessageKind::Init, p)
    }

    pub fn log_state(batch: &StepBatch) -> Message {
        let mut p = Vec::new();
        p.extend_from_slice(&batch.n_samples.to_le_bytes());
        put_tensor(&mut p, &batch.obses);
        put_tensor(&mut p, &batch.actions);
        put_tensor(&mut p, &batch.rewards);
        p.extend_from_slice(&pack_bits(&batch.dones));
        match &batch.frames {
            Some(f) => {
                p.push(1);
                put_tensor(&mut p, f);
            }
            None => p.push(0),
        }
        Message::new(MessageKind::LogState, p)
    }

    pub fn flush() -> Message {
        Message::new(MessageKind::Flush, Vec::new())
    }

    /// ACK with an optional `u64` value (session id or queue depth).
    pub fn ack(value: Option<u64>) -> Message {
        let payload = value.map(|v| v.to_le_bytes().to_vec()).unwrap_or_default();
        Message::new(MessageKind::Ack, payload)
    }

    pub fn error(code: ErrorCode, retry_after_ms: u32, message: &str) -> Message {
        let mut p = vec![code as u8];
        p.extend_from_slice(&retry_after_ms.to_le_bytes());
        p.extend_from_slice(message.as_bytes());
        Message::new(MessageKind::Error, p)
    }

    pub fn parse_init(&self) -> Result<SessionSchema, WireError> {
        let mut r = ByteReader::new(&self.payload);
        let s = read_schema(&mut r)?;
        r.finish()?;
        Ok(s)
    }

    pub fn parse_log_state(&self) -> Result<StepBatch, WireError> {
        let mut r = ByteReader::new(&self.payload);
        let n_samples = r.u32()?;
        let obses = read_tensor(&mut r)?;
        let actions = read_tensor(&mut r)?;
        let rewards = read_tensor(&mut r)?;
        let dones = unpack_bits(r.bytes((n_samples as usize).div_ceil(8))?, n_samples as usize);
        let frames = match r.u8()? {
            0 => None,
            1 => Some(read_tensor(&mut r)?),
            v => return Err(WireError::Payload(format!("frames flag {v}"))),
        };
        r.finish()?;
        Ok(StepBatch { n_samples, obses, actions, rewards, dones, frames })
    }

    pub fn ack_value(&self) -> Option<u64> {
        (self.kind == MessageKind::Ack && self.payload.len() == 8)
            .then(|| u64::from_le_bytes(self.payload[..8].try_into().unwrap()))
    }

    pub fn parse_error(&self) -> Result<ErrorBody, WireError> {
        let mut r = ByteReader::new(&self.payload);
        let code = ErrorCode::from_code(r.u8()?);
        let retry_after_ms = r.u32()?;
        let message = String::from_utf8_lossy(r.bytes(r.remaining())?).into_owned();
        Ok(ErrorBody { code, retry_after_ms, message })
    }
}

pub fn encode_message(m: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.payload.len());
    encode_message_into(&mut out, m);
    out
}

pub fn encode_message_into(out: &mut Vec<u8>, m: &Message) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.kind as u8);
    out.extend_from_slice(&(m.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&m.payload);
}

/// Validates as much of a header as is present. Returns the payload length
/// once all 14 header bytes are available.
fn check_header(buf: &[u8]) -> Result<Option<(MessageKind, u64)>, WireError> {
    let seen = buf.len().min(4);
    if buf[..seen] != MAGIC[..seen] {
        let mut got = [0u8; 4];
        got[..seen].copy_from_slice(&buf[..seen]);
        return Err(WireError::BadMagic(got));
    }
    if buf.len() >= 5 && buf[4] != VERSION {
        return Err(WireError::UnsupportedVersion(buf[4]));
    }
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let kind = MessageKind::from_code(buf[5]).ok_or(WireError::UnknownType(buf[5]))?;
    let len = u64::from_le_bytes(buf[6..14].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(len));
    }
    Ok(Some((kind, len)))
}

/// Decodes one message from the front of `bytes`, returning it with the number
/// of bytes consumed (`14 + payload_len`).
pub fn decode_message(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    match check_header(bytes)? {
        None => Err(WireError::Truncated { needed: HEADER_LEN, have: bytes.len() }),
        Some((kind, len)) => {
            let total = HEADER_LEN + len as usize;
            if bytes.len() < total {
                return Err(WireError::Truncated { needed: total, have: bytes.len() });
            }
            Ok((Message::new(kind, bytes[HEADER_LEN..total].to_vec()), total))
        }
    }
}

/// Incremental decoder for a byte stream that may arrive in arbitrary fragments.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed by a complete message.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, WireError> {
        let pending = &self.buf[self.start..];
        match check_header(pending)? {
            Some((kind, len)) if pending.len() >= HEADER_LEN + len as usize => {
                let end = HEADER_LEN + len as usize;
                let msg = Message::new(kind, pending[HEADER_LEN..end].to_vec());
                self.start += end;
                if self.start > 1 << 20 {
                    self.buf.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(msg))
            }
            _ => Ok(None),
        }
    }
}
