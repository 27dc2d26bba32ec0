use std::time::{Duration, Instant};

use passafe_client::{Client, TeleopSession};
use passafe_core::protocol::{ClientCommand, RunStatus, ServerEvent, ServerMessage, StateFrame};
use passafe_core::scenario::Scenario;
use passafe_service::{start, RunningService, ServiceConfig, ServiceError};

async fn service() -> (RunningService, Client) {
    let svc = start("127.0.0.1:0", &Scenario::default(), ServiceConfig::default()).await.unwrap();
    let client = Client::new(&svc.base_url()).unwrap();
    (svc, client)
}

async fn next_frame(s: &mut TeleopSession) -> StateFrame {
    loop {
        match tokio::time::timeout(Duration::from_secs(5), s.next()).await.expect("frame in time").unwrap() {
            ServerMessage::Frame(f) => return f,
            ServerMessage::Event(e) => panic!("unexpected event {e:?}"),
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_and_batch_endpoints() {
    let (svc, client) = service().await;
    assert_eq!(client.health().await.unwrap().schema_version, 1);

    let err = client.run("gama_x = 1.0").await.unwrap_err();
    assert!(err.is_bad_request(), "{err}");
    assert!(err.to_string().contains("gama_x"), "{err}");

    let ok = client.run("T = 0.02").await.unwrap();
    assert_eq!(ok.status, RunStatus::Completed);
    assert_eq!(ok.summary.records, 21);

    let halted = client
        .run("mode = \"passivity_only\"\nx0 = [1.0, 0.0, 0.0, 0.0]\nu0 = [1.0, 0.0]\nT = 1.0")
        .await
        .unwrap();
    assert_eq!(halted.status, RunStatus::Halted);
    assert_eq!(halted.halted_at, Some(0));
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hello_then_gap_free_frames_at_rate() {
    let (svc, client) = service().await;
    let mut s = client.teleop().await.unwrap();
    assert_eq!(s.schema_version(), 1);
    assert_eq!(s.scenario().k_p, Scenario::default().k_p);

    let first = next_frame(&mut s).await;
    let start = Instant::now();
    let mut last = first.seq;
    for _ in 0..30 {
        let f = next_frame(&mut s).await;
        assert_eq!(f.seq, last + 1);
        assert!(f.is_finite());
        last = f.seq;
    }
    let fps = 30.0 / start.elapsed().as_secs_f64();
    assert!(fps >= 30.0, "{fps} frames/s");
    s.close().await.unwrap();
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_messages_get_replies_and_keep_the_connection() {
    let (svc, client) = service().await;
    let mut s = client.teleop().await.unwrap();
    s.send_raw(r#"{"kind":"set_human_input","u_h":["NaN",0]}"#).await.unwrap();
    match s.next_event().await.unwrap() {
        ServerEvent::Error { message } => assert_eq!(message, "non-finite input"),
        e => panic!("{e:?}"),
    }
    s.send_raw("{oops").await.unwrap();
    match s.next_event().await.unwrap() {
        ServerEvent::Error { message } => assert!(message.starts_with("malformed message"), "{message}"),
        e => panic!("{e:?}"),
    }
    s.send_raw(r#"{"kind":"set_gains","gains":{"d":-1}}"#).await.unwrap();
    match s.next_event().await.unwrap() {
        ServerEvent::Error { message } => assert!(message.contains("`d`"), "{message}"),
        e => panic!("{e:?}"),
    }

    // Still live: an input step shows up in û within three frames.
    let before = next_frame(&mut s).await;
    s.send(&ClientCommand::SetHumanInput { u_h: [1.7, 0.0] }).await.unwrap();
    let mut seen = false;
    for _ in 0..3 {
        let f = next_frame(&mut s).await;
        if f.uhat[0] - before.uhat[0] > 1.5 {
            seen = true;
            break;
        }
    }
    assert!(seen, "input step not reflected within 3 frames");
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn loop_runs_without_clients() {
    let (svc, client) = service().await;
    tokio::time::sleep(Duration::from_millis(400)).await;
    let mut s = client.teleop().await.unwrap();
    let f = next_frame(&mut s).await;
    assert!(f.t > 0.2, "t = {}", f.t);
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn occupied_address_is_a_startup_error() {
    let (svc, _) = service().await;
    let addr = svc.local_addr().to_string();
    let err = start(&addr, &Scenario::default(), ServiceConfig::default()).await.err().unwrap();
    assert!(matches!(err, ServiceError::Bind { .. }), "{err}");
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_body_is_a_client_error() {
    let (svc, _) = service().await;
    // Unknown figure names fail JSON extraction before reaching the handler.
    let http = raw_post(&svc, "/v1/reproduce", r#"{"figure":"fig9"}"#).await;
    assert!(http.starts_with("HTTP/1.1 4"), "{http}");
    svc.shutdown().await.unwrap();
}

/// Minimal HTTP/1.1 POST over a raw socket, to send bodies the typed client cannot.
async fn raw_post(svc: &RunningService, path: &str, body: &str) -> String {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut sock = tokio::net::TcpStream::connect(svc.local_addr()).await.unwrap();
    let req = format!(
        "POST {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    sock.write_all(req.as_bytes()).await.unwrap();
    let mut out = String::new();
    sock.read_to_string(&mut out).await.unwrap();
    out
}
