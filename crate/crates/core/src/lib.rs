//! Simulation core for a hybrid prosthetic-hand controller: gaze-dwell grasp
//! selection, two-site proportional EMG open/close, a six-grasp hand model,
//! the reach-and-grasp trial protocol, and the metrics computed from session
//! logs.

pub mod analysis;
pub mod gaze;
pub mod hand;
pub mod runner;
pub mod signals;
pub mod wire;
pub mod world;

use thiserror::Error;

pub use hand::GraspType;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("grasp-type index {0} out of range 0..=5")]
    InvalidIndex(u8),
    #[error("scheduling failed: {0}")]
    Schedule(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("invalid session log: {0}")]
    InvalidLog(String),
    #[error(transparent)]
    Stats(#[from] analysis::StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
