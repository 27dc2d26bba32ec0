//! axum routes: JSON endpoints for batch work and a WebSocket for live
//! teleoperation.

use std::net::SocketAddr;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};

use passafe_core::protocol::{
    encode_frame, ApiError, ApiErrorKind, CheckRequest, ClientCommand, Health, ReproduceRequest, RunRequest,
    ServerEvent, ServerMessage, SCHEMA_VERSION,
};
use passafe_core::scenario::Scenario;

use crate::api;
use crate::control::{ControlLink, ControlLoop, Envelope};
use crate::engine::{EngineConfig, TeleopEngine};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario: {0}")]
    Scenario(#[from] passafe_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    /// Frames buffered per slow client before the oldest are dropped.
    pub backlog: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            backlog: 32,
        }
    }
}

#[derive(Clone)]
struct AppState {
    link: Option<ControlLink>,
}

/// HTTP endpoints only; `/ws` answers 503.
pub fn batch_router() -> Router {
    router(AppState { link: None })
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/run", post(run))
        .route("/v1/reproduce", post(reproduce))
        .route("/v1/check", post(check))
        .route("/ws", get(ws))
        .with_state(state)
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let code = match self.0.kind {
            ApiErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ApiErrorKind::Simulation => StatusCode::UNPROCESSABLE_ENTITY,
            ApiErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(self.0)).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, Failure> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure),
        Err(e) => Err(Failure(ApiError {
            kind: ApiErrorKind::Internal,
            message: e.to_string(),
        })),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        schema_version: SCHEMA_VERSION,
    })
}

async fn run(Json(req): Json<RunRequest>) -> Result<Response, Failure> {
    Ok(Json(blocking(move || api::run(&req)).await?).into_response())
}

async fn reproduce(Json(req): Json<ReproduceRequest>) -> Result<Response, Failure> {
    Ok(Json(blocking(move || api::reproduce(&req)).await?).into_response())
}

async fn check(Json(req): Json<CheckRequest>) -> Result<Response, Failure> {
    Ok(Json(blocking(move || Ok(api::check(&req))).await?).into_response())
}

async fn ws(State(state): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    match state.link {
        Some(link) => upgrade.on_upgrade(move |socket| session(socket, link)),
        None => Failure(ApiError {
            kind: ApiErrorKind::Internal,
            message: "no live session on this server".into(),
        })
        .into_response(),
    }
    .into_response()
}

async fn session(socket: WebSocket, link: ControlLink) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = link.output.subscribe();
    let hello = ServerEvent::hello(&link.scenario.borrow().clone()).encode();
    if sink.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<ServerEvent>();
    let mut seq = 0u64;
    loop {
        let out = tokio::select! {
            msg = frames.recv() => match msg {
                Ok(m) => match &*m {
                    ServerMessage::Frame(f) => {
                        let mut f = f.clone();
                        f.seq = seq;
                        seq += 1;
                        encode_frame(&f)
                    }
                    ServerMessage::Event(e) => e.encode(),
                },
                // Slow reader: older frames were dropped, carry on with the newest.
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(e) = replies.recv() => e.encode(),
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match handle(&link, &reply_tx, text.as_str()) {
                    Some(e) => e.encode(),
                    None => continue,
                },
                Some(Ok(Message::Binary(_))) => ServerEvent::Error { message: "binary messages are not supported".into() }.encode(),
                Some(Ok(_)) => continue,
                Some(Err(_)) | None => break,
            },
        };
        if sink.send(Message::Text(out.into())).await.is_err() {
            break;
        }
    }
}

/// Route one client message; returns an immediate error reply if any.
fn handle(link: &ControlLink, reply: &mpsc::UnboundedSender<ServerEvent>, text: &str) -> Option<ServerEvent> {
    let cmd: ClientCommand = match serde_json::from_str(text) {
        Ok(c) => c,
        Err(e) => {
            return Some(ServerEvent::Error {
                message: format!("malformed message: {e}"),
            })
        }
    };
    if let Err(message) = cmd.validate() {
        return Some(ServerEvent::Error { message });
    }
    match cmd {
        ClientCommand::SetHumanInput { u_h } => link.human.put(u_h),
        cmd => {
            let env = Envelope {
                cmd,
                reply: Some(reply.clone()),
            };
            if link.commands.send(env).is_err() {
                return Some(ServerEvent::Error {
                    message: "control loop stopped".into(),
                });
            }
        }
    }
    None
}

/// A bound, running service.
pub struct RunningService {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    control: Option<ControlLoop>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Resolves when the server stops on its own (I/O failure).
    pub async fn wait(&mut self) -> std::io::Result<()> {
        match (&mut self.server).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let r = self.wait().await;
        if let Some(mut c) = self.control.take() {
            tokio::task::spawn_blocking(move || c.stop()).await.ok();
        }
        r
    }
}

async fn listen(bind: &str, app: Router, control: Option<ControlLoop>) -> Result<RunningService, ServiceError> {
    let listener = TcpListener::bind(bind).await.map_err(|source| ServiceError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, live = control.is_some(), "listening");
    Ok(RunningService {
        addr,
        shutdown: Some(tx),
        server,
        control,
    })
}

/// Batch endpoints only, no control loop.
pub async fn start_batch(bind: &str) -> Result<RunningService, ServiceError> {
    listen(bind, batch_router(), None).await
}

/// Full service: batch endpoints plus the live loop on `scenario`.
pub async fn start(bind: &str, scenario: &Scenario, cfg: ServiceConfig) -> Result<RunningService, ServiceError> {
    let engine = TeleopEngine::new(scenario, cfg.engine)?;
    let control = ControlLoop::spawn(engine, cfg.backlog)?;
    let app = router(AppState {
        link: Some(control.link()),
    });
    listen(bind, app, Some(control)).await
}
