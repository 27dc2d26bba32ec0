//! Service front end: JSON endpoints for runs, figure reproduction and the
//! acceptance suite, and a live teleoperation loop streamed over WebSocket.

pub mod api;
pub mod control;
pub mod engine;
pub mod server;

pub use engine::{EngineConfig, TeleopEngine, TickReport};
pub use server::{start, start_batch, RunningService, ServiceConfig, ServiceError};
