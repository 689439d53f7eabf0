//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//! Run with `cargo test --test acceptance` (release is faster but not required).

mod common;

use common::net::{spawn, Client};
use common::stores::{all_episodes, random_store};
use common::*;
use rand::Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};
use vizarel_core::model::{DType, SessionSchema, StepBatch, Tensor};
use vizarel_core::projection::{calibrate_affinities, kl_gradient, project, ProjectionParams};
use vizarel_core::server::{router, AppState, ProjectionJobs, Registry, ServerConfig};
use vizarel_core::storage::{Codec, CrashPoint, StoreOptions};
use vizarel_core::synth::{episode_batch, random_episode};
use vizarel_core::wire::{encode_message, FrameDecoder, Message, MessageKind};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn storage_round_trip() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let server = spawn(ServerConfig::new(dir.path()));
    let mut r = rng(2024);
    let mut total_steps = 0;
    for k in 0..20 {
        let (obs_dim, obs_type) = match r.random_range(0..3) {
            0 => (vec![3], DType::F32),
            1 => (vec![8], DType::F64),
            _ => (vec![84, 84], DType::U8),
        };
        let schema = SessionSchema {
            steps: 0,
            obs_dim,
            obs_type,
            action_dim: vec![2],
            action_type: DType::F32,
            reward_dim: r.random_range(1..4),
            reward_type: DType::F32,
            has_frames: r.random_bool(0.3),
        };
        let len = r.random_range(1..=200);
        let terminal = r.random_bool(0.5);
        let mut ep = random_episode(&mut r, &schema, len, terminal);

        let mut c = Client::connect(server.ingest);
        let ack = c.call(&Message::init(&schema));
        let session = ack.ack_value().ok_or_else(|| format!("episode {k}: INIT replied {ack:?}"))?;
        let mut a = 0;
        while a < ep.len() {
            let b = (a + r.random_range(1..=64)).min(ep.len());
            let reply = c.call(&Message::log_state(&episode_batch(&ep[a..b])));
            ensure(reply.kind == MessageKind::Ack, || format!("episode {k}: LOG_STATE replied {reply:?}"))?;
            a = b;
        }
        let reply = c.call(&Message::flush());
        ensure(reply.kind == MessageKind::Ack, || format!("episode {k}: FLUSH replied {reply:?}"))?;
        drop(c);

        // the successor of a flushed final step was never sent
        if !terminal {
            ep.last_mut().unwrap().s_next = None;
        }
        let snap = server.registry.snapshot(session).unwrap().map_err(|e| e.to_string())?;
        snap.validate().map_err(|e| e.to_string())?;
        let stored = all_episodes(&snap);
        ensure(stored.len() == 1, || format!("episode {k}: {} episodes stored", stored.len()))?;
        ensure(stored[0].complete == terminal, || format!("episode {k}: complete flag"))?;
        ensure(stored[0].experiences == ep, || format!("episode {k}: read back differs"))?;
        total_steps += ep.len();
    }
    server.stop();
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("20 episodes, {total_steps} steps bit-identical"))
}

fn random_message(r: &mut impl Rng) -> Message {
    let schema = SessionSchema {
        steps: r.random_range(0..1000),
        obs_dim: vec![r.random_range(1..4)],
        obs_type: DType::F32,
        action_dim: vec![1],
        action_type: DType::I32,
        reward_dim: r.random_range(1..3),
        reward_type: DType::F64,
        has_frames: r.random_bool(0.3),
    };
    match r.random_range(0..5) {
        0 => Message::init(&schema),
        1 | 2 => {
            let len = r.random_range(1..5);
            let terminal = r.random_bool(0.5);
            let ep = random_episode(r, &schema, len, terminal);
            Message::log_state(&episode_batch(&ep))
        }
        3 => Message::flush(),
        _ => Message::ack(r.random_bool(0.5).then(|| r.random())),
    }
}

fn drain(d: &mut FrameDecoder, out: &mut Vec<Message>) -> Result<(), String> {
    while let Some(m) = d.next_message().map_err(|e| e.to_string())? {
        out.push(m);
    }
    Ok(())
}

fn fragmentation() -> Outcome {
    let mut r = rng(99);
    let mut bytes_checked = 0;
    for s in 0..100 {
        let msgs: Vec<Message> = (0..r.random_range(1..6)).map(|_| random_message(&mut r)).collect();
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_message).collect();
        for k in 0..=bytes.len() {
            let mut d = FrameDecoder::new();
            let mut out = Vec::new();
            d.push(&bytes[..k]);
            drain(&mut d, &mut out)?;
            d.push(&bytes[k..]);
            drain(&mut d, &mut out)?;
            ensure(out == msgs && d.buffered() == 0, || format!("stream {s} split at {k}"))?;
        }
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for b in &bytes {
            d.push(std::slice::from_ref(b));
            drain(&mut d, &mut out)?;
        }
        ensure(out == msgs, || format!("stream {s} byte by byte"))?;
        bytes_checked += bytes.len();
    }
    Ok(format!("100 streams, {bytes_checked} bytes, all split points"))
}

fn non_blocking_ingestion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let server = spawn(ServerConfig::new(dir.path()));
    let schema = SessionSchema {
        steps: 0,
        obs_dim: vec![64],
        obs_type: DType::F32,
        action_dim: vec![1],
        action_type: DType::F32,
        reward_dim: 1,
        reward_type: DType::F32,
        has_frames: false,
    };
    let mut c = Client::connect(server.ingest);
    let session = c.call(&Message::init(&schema)).ack_value().ok_or("INIT not acked")?;
    let store = server.registry.store(session).ok_or("no live store")?;
    store.pause_commits();
    let writes_before = store.io_stats().writes();
    let mut r = rng(3);
    let started = Instant::now();
    for i in 0..100u32 {
        let obs: Vec<f32> = (0..1000 * 64).map(|_| r.random()).collect();
        let batch = StepBatch {
            n_samples: 1000,
            obses: Tensor::from_f32(vec![1000, 64], &obs).unwrap(),
            actions: Tensor::from_f32(vec![1000, 1], &[0.5; 1000]).unwrap(),
            rewards: Tensor::from_f32(vec![1000, 1], &[1.0; 1000]).unwrap(),
            dones: (0..1000).map(|t| t % 500 == 499).collect(),
            frames: None,
        };
        let reply = c.call(&Message::log_state(&batch));
        ensure(reply.kind == MessageKind::Ack, || format!("batch {i} replied {reply:?}"))?;
    }
    let ack_time = started.elapsed();
    let writes_during = store.io_stats().writes() - writes_before;
    store.resume_commits();
    ensure(writes_during == 0, || format!("{writes_during} writes while stalled"))?;
    ensure(c.call(&Message::flush()).kind == MessageKind::Ack, || "FLUSH not acked".into())?;
    let steps: u64 = store.snapshot().list_episodes().iter().map(|e| e.n_steps as u64).sum();
    ensure(steps == 100_000, || format!("{steps} steps committed after resume"))?;
    drop(c);
    server.stop();
    Ok(format!("100 batches acked in {ack_time:.2?} with 0 writes; 100000 steps after resume"))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let x = uniform_matrix(seed, 50, 8);
        let aff = calibrate_affinities(&x, 50, 8, 10.0).map_err(|e| e.to_string())?;
        let mut r = rng(seed ^ 0x5eed);
        let y: Vec<[f64; 2]> = (0..50).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
        let err = relative_error(&kl_gradient(&aff.p, &y, 1.0), &fd_gradient(&aff.p, &y, 1e-6));
        worst = worst.max(err);
        ensure(err <= 1e-4, || format!("seed {seed}: relative error {err:.3e}"))?;
    }
    Ok(format!("worst relative error {worst:.3e} over 5 seeds"))
}

fn affinities() -> Outcome {
    let (n, d, perp) = (100, 8, 30.0);
    let mut worst_sum: f64 = 0.0;
    let mut worst_perp: f64 = 0.0;
    for seed in 0..5 {
        let x = uniform_matrix(1000 + seed, n, d);
        let aff = calibrate_affinities(&x, n, d, perp).map_err(|e| e.to_string())?;
        let sum: f64 = aff.p.iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        ensure((sum - 1.0).abs() <= 1e-10, || format!("seed {seed}: sum {sum}"))?;
        for i in 0..n {
            for j in 0..n {
                ensure(aff.p[i * n + j] == aff.p[j * n + i], || format!("seed {seed}: asymmetric at {i},{j}"))?;
            }
            let rel = (oracle_row_perplexity(&x, n, d, i, aff.betas[i]) - perp).abs() / perp;
            worst_perp = worst_perp.max(rel);
            ensure(rel <= 1e-5, || format!("seed {seed} row {i}: relative perplexity error {rel:.3e}"))?;
        }
    }
    Ok(format!("5 inputs: |sum - 1| <= {worst_sum:.1e}, perplexity error <= {worst_perp:.1e}"))
}

fn cluster_recovery() -> Outcome {
    let started = Instant::now();
    let (x, labels) = gaussian_clusters(11, 3, 50, 8, 10.0);
    let params = ProjectionParams { seed: 7, ..Default::default() };
    let a = project(&x, &params).map_err(|e| e.to_string())?;
    let agreement = nn_agreement(&a.coords, &labels);
    let elapsed = started.elapsed();
    let b = project(&x, &params).map_err(|e| e.to_string())?;
    ensure(a.coords == b.coords, || "embedding differs between runs with one seed".into())?;
    ensure(agreement >= 0.9, || format!("agreement {agreement:.3}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("1-NN agreement {agreement:.3}, one run {elapsed:.2?}"))
}

fn metrics_oracle() -> Outcome {
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut r = rng(4242);
    for k in 0..50 {
        let dir = tempfile::tempdir().unwrap();
        let n = r.random_range(1..20);
        random_store(&dir.path().join("session-0"), &mut r, n);
        let registry = Arc::new(Registry::open(dir.path(), StoreOptions::default()).map_err(|e| e.to_string())?);
        let snap = registry.snapshot(0).ok_or("session missing")?.map_err(|e| e.to_string())?;
        let want = oracle_metrics(&all_episodes(&snap));
        let app = router(AppState { registry, jobs: Arc::new(ProjectionJobs::new()), ui_dir: None });
        let body = rt.block_on(async {
            let resp = app.oneshot(Request::get("/api/metrics").body(Body::empty()).unwrap()).await.unwrap();
            resp.into_body().collect().await.unwrap().to_bytes()
        });
        let got: serde_json::Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        for (field, w) in want.as_object().unwrap() {
            let g = &got[field];
            let same = match (g.as_f64(), w.as_f64()) {
                (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                _ => g == w,
            };
            ensure(same, || format!("store {k}: {field} = {g}, oracle {w}"))?;
        }
    }
    Ok("50 stores, every field bit-exact".into())
}

fn crash_consistency() -> Outcome {
    let mut runs = 0;
    for codec in [Codec::Identity, Codec::Deflate] {
        for point in CrashPoint::ALL {
            for on_commit in 0..8 {
                for split in [false, true] {
                    crash::run(point, on_commit, codec, split, on_commit * 13 + 1)
                        .map_err(|e| format!("{point:?} at commit {on_commit} ({codec:?}, split {split}): {e}"))?;
                    runs += 1;
                }
            }
        }
    }
    Ok(format!("{runs} crash runs recovered a valid prefix"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("storage_round_trip", storage_round_trip),
        ("protocol_fragmentation", fragmentation),
        ("non_blocking_ingestion", non_blocking_ingestion),
        ("tsne_gradient_check", gradient_check),
        ("tsne_affinities", affinities),
        ("tsne_cluster_recovery", cluster_recovery),
        ("metrics_oracle", metrics_oracle),
        ("crash_consistency", crash_consistency),
    ];
    // keep panic messages out of the report; they surface as FAIL details
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let t = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name} ({t:.2?}) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({t:.2?}) {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
