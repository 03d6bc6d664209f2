//! Command-line entry points and the live WebSocket session service.

pub mod commands;
pub mod envelope;
pub mod live;
pub mod serve;

pub use live::{replay, Clock, LiveSession};
