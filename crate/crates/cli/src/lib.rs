//! Operational surface for caseloop sessions: an HTTP API and a command
//! line, both delegating to the same operations.

pub mod api;
pub mod config;
pub mod interactive;
pub mod ops;

pub use config::{AppConfig, ClockConfig, Overrides};
pub use ops::{Action, ActionResult, App, OpError, SessionView};
