//! Experiment harness: trial scheduling, the scripted virtual subject and the
//! fixed-step session loop that wires the selector, the myo channel, the hand
//! and the world together.

pub mod agent;
pub mod schedule;
pub mod session;

use serde::{Deserialize, Serialize};

use crate::gaze::{DEFAULT_DWELL_MS, MIN_DWELL_MS};
use crate::hand::GraspType;
use crate::signals::MyoConfig;
use crate::world::{Catalog, Workspace};
use crate::Error;

pub use agent::{AgentConfig, ScriptedAgent, GAZE_PERIOD_MS};
pub use schedule::{schedule_block, schedule_block_with, schedule_session, TrialPlan};
pub use session::{
    check_flow_order, run_session, run_session_with, run_with, Input, InputSource, Observation,
    RecordedInputs, Recorder, Session, SessionSetup, SessionSnapshot, TrialStage, TrialStatus, TrialView,
};

pub const DEFAULT_TICK_MS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Grasp, carry to the target zone, release.
    Transport,
    /// Grasp and hold; the trial ends once the object is held.
    HoldOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Transport => "Transport",
            Mode::HoldOnly => "HoldOnly",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "transport" => Ok(Mode::Transport),
            "holdonly" | "hold-only" | "hold" => Ok(Mode::HoldOnly),
            _ => Err(Error::Parse(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub trials_per_block: usize,
    pub blocks: usize,
    pub mode: Mode,
    pub trial_timeout_ms: f64,
    pub seed: u64,
    pub tick_ms: f64,
    pub dwell_ms: f64,
    /// Active grasp type when the session starts.
    pub initial_grasp: GraspType,
    pub myo: MyoConfig,
    pub workspace: Workspace,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            trials_per_block: 24,
            blocks: 8,
            mode: Mode::Transport,
            trial_timeout_ms: 30_000.0,
            seed: 0,
            tick_ms: DEFAULT_TICK_MS,
            dwell_ms: DEFAULT_DWELL_MS,
            initial_grasp: GraspType::Cylindrical,
            myo: MyoConfig::default(),
            workspace: Workspace::default(),
        }
    }
}

impl ProtocolConfig {
    /// Healthy-subject task: eight transport blocks.
    pub fn healthy() -> Self {
        Self::default()
    }

    /// Patient task: twenty hold-only blocks.
    pub fn patient() -> Self {
        Self {
            blocks: 20,
            mode: Mode::HoldOnly,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("protocol config: {e}")))
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials_per_block != catalog.trials_per_block() {
            return bad(format!(
                "trials_per_block is {} but the catalog yields {} trials per block",
                self.trials_per_block,
                catalog.trials_per_block()
            ));
        }
        if self.blocks == 0 {
            return bad("blocks must be at least 1".into());
        }
        if !(self.tick_ms > 0.0 && self.tick_ms.is_finite()) {
            return bad(format!("tick_ms must be positive, got {}", self.tick_ms));
        }
        if !(self.trial_timeout_ms >= self.tick_ms && self.trial_timeout_ms.is_finite()) {
            return bad(format!("trial_timeout_ms must be at least one tick, got {}", self.trial_timeout_ms));
        }
        if self.dwell_ms.is_nan() || self.dwell_ms < MIN_DWELL_MS {
            return bad(format!("dwell_ms must be at least {MIN_DWELL_MS}, got {}", self.dwell_ms));
        }
        let ws = &self.workspace;
        if !(ws.grasp_tolerance >= 0.0 && ws.vicinity >= ws.grasp_tolerance && ws.zone_min <= ws.zone_max) {
            return bad("workspace geometry is inconsistent".into());
        }
        self.myo.validate()
    }
}
