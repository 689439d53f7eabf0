mod common;

use common::*;
use proptest::prelude::*;
use vizarel_core::model::{DType, SessionSchema, StepBatch, Tensor};
use vizarel_core::wire::{decode_message, encode_message, ErrorCode, FrameDecoder, Message, MessageKind, WireError};

fn pendulum() -> SessionSchema {
    SessionSchema {
        steps: 1000,
        obs_dim: vec![3],
        obs_type: DType::F32,
        action_dim: vec![1],
        action_type: DType::F32,
        reward_dim: 1,
        reward_type: DType::F32,
        has_frames: false,
    }
}

#[test]
fn empty_ack_bytes() {
    let bytes = [0x56, 0x5A, 0x52, 0x4C, 0x01, 0x06, 0, 0, 0, 0, 0, 0, 0, 0];
    assert_eq!(encode_message(&Message::ack(None)), bytes);
    assert_eq!(frame(0x06, &[]), bytes);
    golden("ack_empty.bin", &bytes);
}

#[test]
fn init_bytes() {
    let mut payload = 1000u64.to_le_bytes().to_vec();
    payload.extend([1, 1, 3, 0, 0, 0]); // obs: f32, rank 1, [3]
    payload.extend([1, 1, 1, 0, 0, 0]); // action: f32, rank 1, [1]
    payload.extend([1, 1, 0, 0, 0, 0]); // reward f32, reward_dim 1, no frames
    let want = frame(0x01, &payload);
    let got = encode_message(&Message::init(&pendulum()));
    assert_eq!(got, want);
    golden("init_pendulum.bin", &got);
    let (m, used) = decode_message(&want).unwrap();
    assert_eq!(used, want.len());
    assert_eq!(m.parse_init().unwrap(), pendulum());
}

#[test]
fn log_state_bytes() {
    let batch = StepBatch {
        n_samples: 2,
        obses: Tensor::from_f32(vec![2, 3], &[0.0, 1.0, 0.5, 0.25, 0.75, -1.0]).unwrap(),
        actions: Tensor::from_f32(vec![2, 1], &[1.5, -2.0]).unwrap(),
        rewards: Tensor::from_f32(vec![2, 1], &[-1.0, 0.0]).unwrap(),
        dones: vec![false, true],
        frames: None,
    };
    let mut payload = 2u32.to_le_bytes().to_vec();
    payload.extend(block(1, &[2, 3], &f32_bytes(&[0.0, 1.0, 0.5, 0.25, 0.75, -1.0])));
    payload.extend(block(1, &[2, 1], &f32_bytes(&[1.5, -2.0])));
    payload.extend(block(1, &[2, 1], &f32_bytes(&[-1.0, 0.0])));
    payload.push(0b10); // dones, LSB first
    payload.push(0); // no frames
    let want = frame(0x02, &payload);
    let got = encode_message(&Message::log_state(&batch));
    assert_eq!(got, want);
    golden("log_state_two_steps.bin", &got);
    let (m, _) = decode_message(&want).unwrap();
    assert_eq!(m.parse_log_state().unwrap(), batch);
}

#[test]
fn log_state_with_frames_and_long_dones() {
    let n = 10u32;
    let frames: Vec<u8> = (0..n * 2 * 2 * 3).map(|i| i as u8).collect();
    let mut dones = vec![false; 10];
    dones[0] = true;
    dones[9] = true;
    let batch = StepBatch {
        n_samples: n,
        obses: Tensor::from_u8(vec![n, 2], &[7; 20]).unwrap(),
        actions: Tensor::from_i32(vec![n], &[3; 10]).unwrap(),
        rewards: Tensor::from_f64(vec![n, 2], &[0.5; 20]).unwrap(),
        dones,
        frames: Some(Tensor::from_u8(vec![n, 2, 2, 3], &frames).unwrap()),
    };
    let mut payload = n.to_le_bytes().to_vec();
    payload.extend(block(4, &[10, 2], &[7; 20]));
    payload.extend(block(3, &[10], &[3, 0, 0, 0].repeat(10)));
    payload.extend(block(2, &[10, 2], &0.5f64.to_le_bytes().repeat(20)));
    payload.extend([0b0000_0001, 0b0000_0010]);
    payload.push(1);
    payload.extend(block(4, &[10, 2, 2, 3], &frames));
    let got = encode_message(&Message::log_state(&batch));
    assert_eq!(got, frame(0x02, &payload));
    golden("log_state_frames.bin", &got);
}

#[test]
fn reply_bytes() {
    let ack = encode_message(&Message::ack(Some(0)));
    assert_eq!(ack, frame(0x06, &[0; 8]));
    golden("ack_session0.bin", &ack);
    let mut payload = vec![2, 0, 0, 0, 0];
    payload.extend("reward_dim must be ≥ 1".as_bytes());
    let err = encode_message(&Message::error(ErrorCode::Schema, 0, "reward_dim must be ≥ 1"));
    assert_eq!(err, frame(0x07, &payload));
    golden("error_schema.bin", &err);
    let bp = Message::error(ErrorCode::Backpressure, 50, "queue full");
    let body = bp.parse_error().unwrap();
    assert_eq!((body.code, body.retry_after_ms, body.message.as_str()), (ErrorCode::Backpressure, 50, "queue full"));
    assert_eq!(encode_message(&Message::flush()), frame(0x03, &[]));
    golden("flush.bin", &encode_message(&Message::flush()));
}

#[test]
fn framing_errors() {
    let mut bad = frame(0x03, &[]);
    bad[..4].copy_from_slice(b"XXXX");
    let err = decode_message(&bad).unwrap_err();
    assert!(matches!(err, WireError::BadMagic(_)) && err.is_framing());
    let mut d = FrameDecoder::new();
    d.push(b"XX");
    assert!(d.next_message().is_err(), "bad magic is detected before the header completes");
    assert!(decode_message(&frame(0x09, &[])).unwrap_err().is_framing());
    let mut v2 = frame(0x03, &[]);
    v2[4] = 2;
    assert!(matches!(decode_message(&v2), Err(WireError::UnsupportedVersion(2))));
    let mut huge = frame(0x02, &[]);
    huge[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(decode_message(&huge), Err(WireError::PayloadTooLarge(_))));
}

#[test]
fn malformed_payloads_are_not_framing_errors() {
    let m = Message::new(MessageKind::LogState, vec![2, 0, 0, 0, 1]);
    let err = m.parse_log_state().unwrap_err();
    assert!(!err.is_framing());
    let m = Message::new(MessageKind::Init, vec![0; 3]);
    assert!(m.parse_init().is_err());
}

fn kind() -> impl Strategy<Value = MessageKind> {
    prop_oneof![
        Just(MessageKind::Init),
        Just(MessageKind::LogState),
        Just(MessageKind::Flush),
        Just(MessageKind::Ack),
        Just(MessageKind::Error),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    (kind(), prop::collection::vec(any::<u8>(), 0..40)).prop_map(|(k, p)| Message::new(k, p))
}

fn stream() -> impl Strategy<Value = Vec<Message>> {
    prop::collection::vec(message(), 1..6)
}

fn drain(d: &mut FrameDecoder, out: &mut Vec<Message>) {
    while let Some(m) = d.next_message().unwrap() {
        out.push(m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn harness_encoder_agrees(m in message()) {
        prop_assert_eq!(encode_message(&m), frame(m.kind as u8, &m.payload));
        let bytes = encode_message(&m);
        let (back, used) = decode_message(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }

    #[test]
    fn every_split_point_parses_identically(msgs in stream()) {
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_message).collect();
        for k in 0..=bytes.len() {
            let mut d = FrameDecoder::new();
            let mut out = Vec::new();
            d.push(&bytes[..k]);
            drain(&mut d, &mut out);
            d.push(&bytes[k..]);
            drain(&mut d, &mut out);
            prop_assert_eq!(&out, &msgs);
            prop_assert_eq!(d.buffered(), 0);
        }
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for b in &bytes {
            d.push(std::slice::from_ref(b));
            drain(&mut d, &mut out);
        }
        prop_assert_eq!(out, msgs);
    }

    #[test]
    fn random_chunking_parses_identically(msgs in stream(), cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..8)) {
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_message).collect();
        let mut points: Vec<usize> = cuts.iter().map(|c| c.index(bytes.len() + 1)).collect();
        points.push(0);
        points.push(bytes.len());
        points.sort_unstable();
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for w in points.windows(2) {
            d.push(&bytes[w[0]..w[1]]);
            drain(&mut d, &mut out);
        }
        prop_assert_eq!(out, msgs);
    }

    #[test]
    fn log_state_round_trips(n in 1u32..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let obs: Vec<f32> = (0..n * 4).map(|_| r.random()).collect();
        let batch = StepBatch {
            n_samples: n,
            obses: Tensor::from_f32(vec![n, 4], &obs).unwrap(),
            actions: Tensor::from_i32(vec![n], &(0..n as i32).collect::<Vec<_>>()).unwrap(),
            rewards: Tensor::from_f64(vec![n, 1], &vec![1.0; n as usize]).unwrap(),
            dones: (0..n).map(|_| r.random()).collect(),
            frames: None,
        };
        let m = Message::log_state(&batch);
        prop_assert_eq!(m.parse_log_state().unwrap(), batch);
    }
}
