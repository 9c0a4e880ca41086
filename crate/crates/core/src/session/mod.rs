//! The development workflow as an event-sourced state machine. Commands on
//! [`Session`] call the model and the runner, then record what happened as
//! [`SessionEvent`]s; [`SessionState`] is a pure fold over those events.

mod clock;
mod config;
mod engine;
mod feedback;
mod state;
pub mod store;

pub use clock::{Clock, SteppingClock, SystemClock};
pub use config::SessionConfig;
pub use engine::{session_id_for, Services, Session};
pub use feedback::{route_feedback, ManualFeedback, Route, UseCaseVerdict};
pub use state::{
    BundleOrigin, Candidate, Counters, EventKind, FinalReason, FixRound, GeneratedTest, LoopStage, Phase, RunSummary,
    SessionError, SessionEvent, SessionState,
};
pub use store::{load_state, EventStore, LoadError};
