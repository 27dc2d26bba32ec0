use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use passafe_core::barrier::ConstraintTag;
use passafe_core::filter::FilterMode;
use passafe_core::protocol::{decode_frame, encode_frame, ServerEvent, ServerMessage, StateFrame};
use passafe_core::qpsolver::QpStatus;

fn zero_frame() -> StateFrame {
    StateFrame {
        seq: 0,
        t: 0.0,
        x1: [0.0; 2],
        x2: [0.0; 2],
        u: [0.0; 2],
        uhat: [0.0; 2],
        v_star: [0.0; 2],
        h_x: 0.0,
        h_u: 0.0,
        mode: FilterMode::None,
        qp_status: QpStatus::Optimal,
        active: vec![],
        wall_ms: 0,
    }
}

#[test]
fn zero_frame_matches_golden_bytes() {
    let golden = include_str!("golden/frame_zero.json").trim_end();
    assert_eq!(encode_frame(&zero_frame()), golden);
}

#[test]
fn frames_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let modes = FilterMode::ALL;
    for _ in 0..100 {
        let mut num = || {
            let mag: f64 = 10f64.powi(rng.random_range(-12..6));
            rng.random_range(-1.0..1.0) * mag
        };
        let mut f = StateFrame {
            seq: 0,
            t: num().abs(),
            x1: [num(), num()],
            x2: [num(), num()],
            u: [num(), num()],
            uhat: [num(), num()],
            v_star: [num(), num()],
            h_x: num(),
            h_u: num(),
            mode: FilterMode::Both,
            qp_status: QpStatus::Optimal,
            active: vec![],
            wall_ms: 0,
        };
        f.seq = rng.random();
        f.wall_ms = rng.random_range(0..u64::MAX / 2);
        f.mode = modes[rng.random_range(0..modes.len())];
        f.qp_status = if rng.random_bool(0.1) { QpStatus::Infeasible } else { QpStatus::Optimal };
        f.active = [ConstraintTag::Safety, ConstraintTag::Passivity]
            .into_iter()
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let text = encode_frame(&f);
        assert_eq!(decode_frame(&text).unwrap(), f, "{text}");
        assert_eq!(ServerMessage::decode(&text).unwrap(), ServerMessage::Frame(f));
    }
}

#[test]
fn unknown_frame_key_is_rejected() {
    let mut v: serde_json::Value = serde_json::from_str(&encode_frame(&zero_frame())).unwrap();
    v["extra"] = serde_json::json!(1);
    assert!(decode_frame(&v.to_string()).is_err());
}

#[test]
fn frame_keys_are_exact() {
    let v: serde_json::Value = serde_json::from_str(&encode_frame(&zero_frame())).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = vec![
        "seq", "t", "x1", "x2", "u", "uhat", "v_star", "h_x", "h_u", "mode", "qp_status", "active", "wall_ms",
    ];
    expected.sort();
    assert_eq!(keys, expected);
}

#[test]
fn error_event_shape() {
    let e = ServerEvent::Error {
        message: "non-finite input".into(),
    };
    assert_eq!(e.encode(), r#"{"kind":"error","message":"non-finite input"}"#);
}
