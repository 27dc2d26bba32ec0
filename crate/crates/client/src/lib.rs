//! Async client for the passafe service: batch endpoints over HTTP/JSON and
//! a live teleoperation session over WebSocket.

use futures_util::{SinkExt, StreamExt};
use reqwest::StatusCode;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use passafe_core::acceptance::{AcceptanceReport, Thresholds};
use passafe_core::protocol::{
    ApiError, ApiErrorKind, CheckRequest, ClientCommand, Health, ReproduceRequest, ReproduceResponse, RunRequest,
    RunResponse, ServerEvent, ServerMessage,
};
use passafe_core::scenario::{Figure, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid server url `{0}`")]
    Url(String),
    #[error("transport: {0}")]
    Http(#[from] reqwest::Error),
    /// The server answered with an error body.
    #[error("{}", .error.message)]
    Api { status: u16, error: ApiError },
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("undecodable server message: {0}")]
    Decode(String),
    #[error("connection closed")]
    Closed,
}

impl ClientError {
    pub fn is_bad_request(&self) -> bool {
        matches!(self, ClientError::Api { error, .. } if error.kind == ApiErrorKind::BadRequest)
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is `http://host:port`, with or without a trailing slash.
    pub fn new(base: &str) -> Result<Self> {
        let base = base.trim_end_matches('/').to_string();
        if !base.starts_with("http://") && !base.starts_with("https://") {
            return Err(ClientError::Url(base));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn health(&self) -> Result<Health> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        decode(resp).await
    }

    pub async fn run(&self, scenario_toml: &str) -> Result<RunResponse> {
        self.post(
            "/v1/run",
            &RunRequest {
                scenario_toml: scenario_toml.to_string(),
            },
        )
        .await
    }

    pub async fn reproduce(&self, figure: Figure) -> Result<ReproduceResponse> {
        self.post("/v1/reproduce", &ReproduceRequest { figure }).await
    }

    pub async fn check(&self, thresholds: Option<Thresholds>) -> Result<AcceptanceReport> {
        self.post("/v1/check", &CheckRequest { thresholds }).await
    }

    /// Open the live channel; the server's hello has been read when this returns.
    pub async fn teleop(&self) -> Result<TeleopSession> {
        let url = format!("ws{}/ws", self.base.trim_start_matches("http"));
        let (ws, _) = tokio_tungstenite::connect_async(url.as_str()).await?;
        let mut session = TeleopSession {
            ws,
            scenario: Scenario::default(),
            schema_version: 0,
        };
        match session.next().await? {
            ServerMessage::Event(ServerEvent::Hello {
                schema_version,
                scenario,
            }) => {
                session.schema_version = schema_version;
                session.scenario = scenario;
                Ok(session)
            }
            other => Err(ClientError::Decode(format!("expected hello, got {other:?}"))),
        }
    }

    async fn post<B: serde::Serialize, T: serde::de::DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        decode(resp).await
    }
}

async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    let status = resp.status();
    let bytes = resp.bytes().await?;
    if status.is_success() {
        return serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()));
    }
    let error = serde_json::from_slice::<ApiError>(&bytes).unwrap_or_else(|_| ApiError {
        // Extractor rejections come back as plain text.
        kind: if status.is_client_error() && status != StatusCode::NOT_FOUND {
            ApiErrorKind::BadRequest
        } else {
            ApiErrorKind::Internal
        },
        message: String::from_utf8_lossy(&bytes).into_owned(),
    });
    Err(ClientError::Api {
        status: status.as_u16(),
        error,
    })
}

pub struct TeleopSession {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    scenario: Scenario,
    schema_version: u32,
}

impl TeleopSession {
    /// Scenario announced in the hello.
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub async fn send(&mut self, cmd: &ClientCommand) -> Result<()> {
        let text = serde_json::to_string(cmd).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.send_raw(&text).await
    }

    /// Send text as-is; for probing the server's validation.
    pub async fn send_raw(&mut self, text: &str) -> Result<()> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    pub async fn next(&mut self) -> Result<ServerMessage> {
        loop {
            match self.ws.next().await {
                Some(Ok(Message::Text(text))) => {
                    return ServerMessage::decode(text.as_str()).map_err(|e| ClientError::Decode(e.to_string()))
                }
                Some(Ok(Message::Close(_))) | None => return Err(ClientError::Closed),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            }
        }
    }

    /// Next message that is not a frame.
    pub async fn next_event(&mut self) -> Result<ServerEvent> {
        loop {
            if let ServerMessage::Event(e) = self.next().await? {
                return Ok(e);
            }
        }
    }

    pub async fn close(mut self) -> Result<()> {
        self.ws.close(None).await?;
        Ok(())
    }
}
