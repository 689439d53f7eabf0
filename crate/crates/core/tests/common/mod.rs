//! Shared oracles and fixtures. Deliberately naive: they recompute results
//! from definitions instead of calling into the crate's own helpers.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vizarel_core::projection::{FeatureMatrix, StepRef};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(seed: u64, n: usize, d: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * d).map(|_| r.random_range(-3.0..3.0)).collect()
}

/// KL(P || Q) straight from the definition of the Student-t joint Q.
pub fn oracle_kl(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let w = |i: usize, j: usize| {
        let dx = y[i][0] - y[j][0];
        let dy = y[i][1] - y[j][1];
        1.0 / (1.0 + dx * dx + dy * dy)
    };
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += w(i, j);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i * n + j] > 0.0 {
                kl += p[i * n + j] * (p[i * n + j] / (w(i, j) / z)).ln();
            }
        }
    }
    kl
}

/// Central finite-difference gradient of the oracle KL.
pub fn fd_gradient(p: &[f64], y: &[[f64; 2]], h: f64) -> Vec<[f64; 2]> {
    let mut y = y.to_vec();
    let mut g = vec![[0.0; 2]; y.len()];
    for i in 0..y.len() {
        for k in 0..2 {
            let orig = y[i][k];
            y[i][k] = orig + h;
            let plus = oracle_kl(p, &y);
            y[i][k] = orig - h;
            let minus = oracle_kl(p, &y);
            y[i][k] = orig;
            g[i][k] = (plus - minus) / (2.0 * h);
        }
    }
    g
}

/// `|a - b| / max(|a|, |b|)` over the flattened gradients.
pub fn relative_error(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let norm = |v: &[[f64; 2]]| v.iter().map(|x| x[0] * x[0] + x[1] * x[1]).sum::<f64>().sqrt();
    let diff: Vec<[f64; 2]> = a.iter().zip(b).map(|(x, y)| [x[0] - y[0], x[1] - y[1]]).collect();
    norm(&diff) / norm(a).max(norm(b))
}

/// Perplexity of row `i`'s conditional Gaussian at precision `beta`,
/// computed directly in bits.
pub fn oracle_row_perplexity(x: &[f64], n: usize, d: usize, i: usize, beta: f64) -> f64 {
    let dist: Vec<f64> = (0..n)
        .map(|j| (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum())
        .collect();
    let w: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (-beta * dist[j]).exp() }).collect();
    let z: f64 = w.iter().sum();
    let h: f64 = w.iter().filter(|&&v| v > 0.0).map(|&v| -(v / z) * (v / z).log2()).sum();
    h.exp2()
}

/// `k` isotropic Gaussian clusters of `per` points in `d` dims, centres
/// `sep` standard deviations apart along separate axes.
pub fn gaussian_clusters(seed: u64, k: usize, per: usize, d: usize, sep: f64) -> (FeatureMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        for _ in 0..per {
            for j in 0..d {
                let centre = if j == c % d { sep } else { 0.0 };
                data.push(centre + normal.sample(&mut r));
            }
            labels.push(c);
        }
    }
    let n = k * per;
    let refs = (0..n as u32).map(|t| StepRef { episode_id: 0, t }).collect();
    (FeatureMatrix::from_rows(d, data, refs), labels)
}

/// Fraction of points whose nearest embedded neighbour shares their label.
pub fn nn_agreement(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = coords.len();
    let mut hits = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, 0);
        for j in 0..n {
            if i != j {
                let d = (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        if labels[best.1] == labels[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Compares `bytes` with `tests/golden/<name>`. Set `VIZAREL_BLESS=1` to
/// rewrite the file instead.
pub fn golden(name: &str, bytes: &[u8]) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("VIZAREL_BLESS").is_some() {
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(bytes, &want[..], "{name} differs from golden file");
}

/// Test-harness framing: magic, version 1, type byte, u64 LE length, payload.
pub fn frame(kind: u8, payload: &[u8]) -> Vec<u8> {
    let mut b = b"VZRL".to_vec();
    b.push(1);
    b.push(kind);
    b.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    b.extend_from_slice(payload);
    b
}

/// Tensor block: dtype code, rank, u32 LE dims, raw data.
pub fn block(dtype: u8, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut b = vec![dtype, dims.len() as u8];
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b.extend_from_slice(data);
    b
}

pub fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub mod net {
    use std::io::{Read, Write};
    use std::net::{SocketAddr, TcpStream};
    use std::sync::Arc;
    use vizarel_core::server::{Registry, Server, ServerConfig};
    use vizarel_core::wire::{FrameDecoder, Message};

    /// Blocking protocol client built on the harness framing.
    pub struct Client {
        pub stream: TcpStream,
        decoder: FrameDecoder,
    }

    impl Client {
        pub fn connect(addr: SocketAddr) -> Client {
            let stream = TcpStream::connect(addr).unwrap();
            stream.set_nodelay(true).unwrap();
            Client { stream, decoder: FrameDecoder::new() }
        }

        pub fn send_raw(&mut self, bytes: &[u8]) {
            self.stream.write_all(bytes).unwrap();
        }

        pub fn send(&mut self, m: &Message) {
            self.send_raw(&super::frame(m.kind as u8, &m.payload));
        }

        /// Next reply, `None` once the server has closed the connection.
        pub fn recv(&mut self) -> Option<Message> {
            let mut buf = [0u8; 4096];
            loop {
                if let Some(m) = self.decoder.next_message().unwrap() {
                    return Some(m);
                }
                match self.stream.read(&mut buf) {
                    Ok(0) | Err(_) => return None,
                    Ok(n) => self.decoder.push(&buf[..n]),
                }
            }
        }

        pub fn call(&mut self, m: &Message) -> Message {
            self.send(m);
            self.recv().expect("server closed the connection")
        }
    }

    pub struct Running {
        pub ingest: SocketAddr,
        pub http: SocketAddr,
        pub registry: Arc<Registry>,
        stop: Option<tokio::sync::oneshot::Sender<()>>,
        thread: Option<std::thread::JoinHandle<()>>,
    }

    impl Running {
        pub fn stop(mut self) {
            self.shutdown();
        }

        fn shutdown(&mut self) {
            if let Some(tx) = self.stop.take() {
                let _ = tx.send(());
            }
            if let Some(t) = self.thread.take() {
                t.join().unwrap();
            }
        }
    }

    impl Drop for Running {
        fn drop(&mut self) {
            self.shutdown();
        }
    }

    /// Starts a server on ephemeral ports in a background runtime.
    pub fn spawn(mut config: ServerConfig) -> Running {
        config.ingest_addr = "127.0.0.1:0".parse().unwrap();
        config.http_addr = "127.0.0.1:0".parse().unwrap();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let server = Server::bind(config).await.unwrap();
                addr_tx.send((server.ingest_addr(), server.http_addr(), server.registry())).unwrap();
                server
                    .run(async move {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let (ingest, http, registry) = addr_rx.recv().unwrap();
        Running { ingest, http, registry, stop: Some(stop), thread: Some(thread) }
    }

    /// Minimal HTTP/1.1 GET over a fresh connection: (status, body).
    pub fn http_get(addr: SocketAddr, path: &str) -> (u16, Vec<u8>) {
        let mut s = TcpStream::connect(addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
        let mut raw = Vec::new();
        s.read_to_end(&mut raw).unwrap();
        let split = raw.windows(4).position(|w| w == b"\r\n\r\n").expect("header end");
        let head = String::from_utf8_lossy(&raw[..split]).to_string();
        let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
        let mut body = raw[split + 4..].to_vec();
        if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
            body = dechunk(&body);
        }
        (status, body)
    }

    fn dechunk(mut b: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        loop {
            let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
            let size = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
            if size == 0 {
                return out;
            }
            out.extend_from_slice(&b[eol + 2..eol + 2 + size]);
            b = &b[eol + 2 + size + 2..];
        }
    }
}

pub mod stores {
    use rand::Rng;
    use std::path::Path;
    use vizarel_core::model::{DType, Episode, SessionSchema};
    use vizarel_core::storage::{Snapshot, Store, StoreOptions};
    use vizarel_core::synth::random_episode;

    pub fn random_schema(r: &mut impl Rng) -> SessionSchema {
        let dtypes = [DType::F32, DType::F64, DType::I32, DType::U8];
        let dims = |r: &mut dyn rand::RngCore| -> Vec<u32> {
            (0..r.random_range(1..3)).map(|_| r.random_range(1..4)).collect()
        };
        SessionSchema {
            steps: 0,
            obs_dim: dims(r),
            obs_type: dtypes[r.random_range(0..4)],
            action_dim: dims(r),
            action_type: dtypes[r.random_range(0..4)],
            reward_dim: r.random_range(1..4),
            reward_type: [DType::F32, DType::F64][r.random_range(0..2)],
            has_frames: r.random_bool(0.3),
        }
    }

    /// A store of `n` random episodes, some left incomplete.
    pub fn random_store(dir: &Path, r: &mut impl Rng, n: usize) -> (SessionSchema, Vec<Vec<vizarel_core::model::Experience>>) {
        let schema = random_schema(r);
        let store = Store::create(dir, schema.clone(), StoreOptions::default()).unwrap();
        let mut logged = Vec::new();
        for _ in 0..n {
            let len = r.random_range(1..40);
            let terminal = r.random_bool(0.7);
            let ep = random_episode(r, &schema, len, terminal);
            store.enqueue_append(ep.clone()).unwrap();
            if !terminal {
                store.flush().unwrap();
            }
            logged.push(ep);
        }
        store.close().unwrap();
        (schema, logged)
    }

    pub fn all_episodes(snap: &Snapshot) -> Vec<Episode> {
        snap.list_episodes().iter().map(|s| snap.read_episode(s.id).unwrap()).collect()
    }
}

/// Brute-force metrics: plain loops over fully read episodes, summing in
/// id order and dividing once.
pub fn oracle_metrics(episodes: &[vizarel_core::model::Episode]) -> serde_json::Value {
    let mut count = 0u64;
    let mut complete = 0u64;
    let mut steps = 0u64;
    let (mut ret, mut dur, mut len) = (0.0f64, 0.0f64, 0.0f64);
    for ep in episodes {
        count += 1;
        steps += ep.experiences.len() as u64;
        if ep.complete {
            complete += 1;
            let mut g = 0.0;
            for e in &ep.experiences {
                let mut r = 0.0;
                for i in 0..e.r.len() {
                    r += e.r.get_f64(i);
                }
                g += r;
            }
            ret += g;
            dur += ep.wall_end - ep.wall_start;
            len += ep.experiences.len() as f64;
        }
    }
    let avg = |x: f64| if complete == 0 { serde_json::Value::Null } else { serde_json::json!(x / complete as f64) };
    serde_json::json!({
        "episode_count": count,
        "complete_count": complete,
        "total_steps": steps,
        "average_return": avg(ret),
        "average_duration_s": avg(dur),
        "average_length": avg(len),
    })
}

pub mod crash {
    use rand::Rng;
    use vizarel_core::model::{DType, Experience, SessionSchema};
    use vizarel_core::storage::{open_snapshot, Codec, CrashPoint, FaultPlan, Store, StoreOptions};
    use vizarel_core::synth::random_episode;

    pub fn schema() -> SessionSchema {
        SessionSchema {
            steps: 0,
            obs_dim: vec![8],
            obs_type: DType::F32,
            action_dim: vec![2],
            action_type: DType::F32,
            reward_dim: 2,
            reward_type: DType::F64,
            has_frames: false,
        }
    }

    /// Logs episodes one commit at a time into a store that dies at
    /// `point` during commit `on_commit`, then reopens it. Checks that the
    /// directory validates, holds a bit-exact prefix of the logged
    /// episodes, and accepts new appends. Returns the recovered count.
    /// With `split`, each episode arrives in two synced pieces so commits
    /// also carry continuation records of an open episode.
    pub fn run(point: CrashPoint, on_commit: u64, codec: Codec, split: bool, seed: u64) -> Result<usize, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut r = super::rng(seed);
        let opts = StoreOptions {
            chunk_target_bytes: 2048,
            codec,
            fault: Some(FaultPlan { point, on_commit }),
            ..StoreOptions::default()
        };
        let schema = schema();
        let store = Store::create(dir.path(), schema.clone(), opts).map_err(|e| e.to_string())?;
        let mut logged: Vec<Vec<Experience>> = Vec::new();
        for _ in 0..6 {
            let len = r.random_range(if split { 40..80 } else { 1..60 });
            let ep = random_episode(&mut r, &schema, len, true);
            let cut = if split { len as usize / 2 } else { 0 };
            if cut > 0 && (store.enqueue_append(ep[..cut].to_vec()).is_err() || store.sync().is_err()) {
                break;
            }
            if store.enqueue_append(ep[cut..].to_vec()).is_err() {
                break;
            }
            logged.push(ep);
            if store.sync().is_err() {
                break;
            }
        }
        drop(store);

        let snap = open_snapshot(dir.path()).map_err(|e| format!("reopen: {e}"))?;
        snap.validate().map_err(|e| format!("validate: {e}"))?;
        let n = snap.episode_count();
        if n > logged.len() {
            return Err(format!("{n} episodes recovered, only {} logged", logged.len()));
        }
        for (i, want) in logged.iter().take(n).enumerate() {
            let got = snap.read_episode(i as u64).map_err(|e| e.to_string())?;
            if &got.experiences != want {
                return Err(format!("episode {i} differs after recovery"));
            }
        }
        // the recovered store keeps working
        let store = Store::open(dir.path(), StoreOptions { codec, ..StoreOptions::default() }).map_err(|e| e.to_string())?;
        let extra = random_episode(&mut r, &schema, 30, true);
        store.enqueue_append(extra.clone()).map_err(|e| e.to_string())?;
        store.close().map_err(|e| e.to_string())?;
        let snap = open_snapshot(dir.path()).map_err(|e| e.to_string())?;
        snap.validate().map_err(|e| format!("validate after append: {e}"))?;
        if snap.read_episode(n as u64).map_err(|e| e.to_string())?.experiences != extra {
            return Err("append after recovery differs".into());
        }
        Ok(n)
    }
}
