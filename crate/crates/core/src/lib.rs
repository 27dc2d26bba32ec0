//! Input filter that keeps a teleoperated plant inside a safe set and
//! passive with respect to its operator.

pub mod acceptance;
pub mod barrier;
pub mod closed_form;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod passivity;
pub mod protocol;
pub mod qpsolver;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod tracking;

pub use error::{Error, Result};
