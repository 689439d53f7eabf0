//! Binary ingestion: one session per connection.

use super::registry::Registry;
use crate::model::{build_experiences, Carry, ModelError};
use crate::storage::{StorageError, Store};
use crate::wire::{encode_message, ErrorCode, FrameDecoder, Message, MessageKind, WireError};
use std::sync::Arc;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::watch;

/// Suggested client back-off when the commit queue is full.
pub const BACKPRESSURE_RETRY_MS: u32 = 50;

struct Bound {
    id: u64,
    store: Arc<Store>,
    carry: Option<Carry>,
    accepted: u64,
}

/// Protocol state of one ingestion connection.
pub struct IngestSession {
    registry: Arc<Registry>,
    bound: Option<Bound>,
}

fn protocol(msg: impl Into<String>) -> Message {
    Message::error(ErrorCode::Protocol, 0, &msg.into())
}

fn model_error(e: &ModelError) -> Message {
    match e {
        ModelError::Schema(m) => Message::error(ErrorCode::Schema, 0, m),
        other => Message::error(ErrorCode::Shape, 0, &other.to_string()),
    }
}

fn storage_error(e: &StorageError) -> Message {
    match e {
        StorageError::Backpressure { .. } => Message::error(ErrorCode::Backpressure, BACKPRESSURE_RETRY_MS, &e.to_string()),
        StorageError::Model(m) => model_error(m),
        other => Message::error(ErrorCode::Storage, 0, &other.to_string()),
    }
}

fn wire_error(e: &WireError) -> Message {
    match e {
        WireError::Model(m) => model_error(m),
        other => protocol(other.to_string()),
    }
}

impl IngestSession {
    pub fn new(registry: Arc<Registry>) -> IngestSession {
        IngestSession { registry, bound: None }
    }

    pub fn session_id(&self) -> Option<u64> {
        self.bound.as_ref().map(|b| b.id)
    }

    /// Steps accepted so far (the sum of accepted `n_samples`).
    pub fn accepted_steps(&self) -> u64 {
        self.bound.as_ref().map_or(0, |b| b.accepted)
    }

    /// Handles one message and returns the reply. Only FLUSH may block, on
    /// the commit thread.
    pub fn handle(&mut self, msg: &Message) -> Message {
        match msg.kind {
            MessageKind::Init => self.init(msg),
            MessageKind::LogState => self.log_state(msg),
            MessageKind::Flush => self.flush(),
            MessageKind::Ack | MessageKind::Error => protocol(format!("unexpected {:?} from client", msg.kind)),
        }
    }

    fn init(&mut self, msg: &Message) -> Message {
        if self.bound.is_some() {
            return protocol("session already initialized on this connection");
        }
        let schema = match msg.parse_init() {
            Ok(s) => s,
            Err(e) => return wire_error(&e),
        };
        match self.registry.create(schema) {
            Ok((id, store)) => {
                tracing::info!(session = id, "session started");
                self.bound = Some(Bound { id, store, carry: None, accepted: 0 });
                Message::ack(Some(id))
            }
            Err(e) => storage_error(&e),
        }
    }

    fn log_state(&mut self, msg: &Message) -> Message {
        let Some(b) = self.bound.as_mut() else {
            return protocol("LOG_STATE before INIT");
        };
        let batch = match msg.parse_log_state() {
            Ok(batch) => batch,
            Err(e) => return wire_error(&e),
        };
        let n = batch.n_samples as u64;
        let (exps, carry) = match build_experiences(b.store.schema(), batch, b.carry.clone()) {
            Ok(v) => v,
            Err(e) => return model_error(&e),
        };
        match b.store.enqueue_append(exps) {
            Ok(depth) => {
                b.carry = carry;
                b.accepted += n;
                Message::ack(Some((depth + b.carry.is_some() as usize) as u64))
            }
            Err(e) => storage_error(&e),
        }
    }

    fn flush(&mut self) -> Message {
        let Some(b) = self.bound.as_mut() else {
            return Message::ack(None);
        };
        if let Some(c) = b.carry.clone() {
            if let Err(e) = b.store.enqueue_append(vec![c.into_trailing()]) {
                return storage_error(&e);
            }
            b.carry = None;
        }
        match b.store.flush() {
            Ok(()) => Message::ack(None),
            Err(e) => storage_error(&e),
        }
    }

    /// End of connection: commits the carry and open episode, then hands
    /// the session back to the registry.
    pub fn finish(&mut self) {
        if self.bound.is_some() {
            let reply = self.flush();
            if reply.kind == MessageKind::Error {
                tracing::warn!("flush at disconnect failed: {:?}", reply.parse_error());
            }
        }
        if let Some(b) = self.bound.take() {
            self.registry.release(b.id);
            tracing::info!(session = b.id, steps = b.accepted, "session ended");
        }
    }
}

impl Drop for IngestSession {
    fn drop(&mut self) {
        self.finish();
    }
}

/// Runs one ingestion connection until EOF, a framing error or shutdown.
pub async fn serve_connection(mut stream: TcpStream, registry: Arc<Registry>, mut shutdown: watch::Receiver<bool>) {
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut session = Some(IngestSession::new(registry));
    'conn: loop {
        let n = tokio::select! {
            r = stream.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
            _ = shutdown.changed() => break,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(msg)) => {
                    let mut s = session.take().expect("session present");
                    let (s, reply) = tokio::task::spawn_blocking(move || {
                        let reply = s.handle(&msg);
                        (s, reply)
                    })
                    .await
                    .expect("ingest handler panicked");
                    session = Some(s);
                    if stream.write_all(&encode_message(&reply)).await.is_err() {
                        break 'conn;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = stream.write_all(&encode_message(&wire_error(&e))).await;
                    break 'conn;
                }
            }
        }
    }
    if let Some(mut s) = session {
        let _ = tokio::task::spawn_blocking(move || s.finish()).await;
    }
}
