//! Two-site myoelectric interface.
//!
//! Each channel is rectified, scaled by a per-channel gain and smoothed by a
//! first-order low-pass filter. The smoothed envelopes are thresholded and the
//! supra-threshold activation is mapped linearly onto finger speed, saturating
//! at `omega_max`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::Error;

/// Raw two-channel EMG sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgFrame {
    pub t_ms: f64,
    pub flexor: f64,
    pub extensor: f64,
}

impl EmgFrame {
    pub fn new(t_ms: f64, flexor: f64, extensor: f64) -> Self {
        Self {
            t_ms,
            flexor,
            extensor,
        }
    }
}

impl fmt::Display for EmgFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.t_ms, self.flexor, self.extensor)
    }
}

impl FromStr for EmgFrame {
    type Err = Error;

    /// Parses one `t_ms flexor extensor` record.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "expected `t_ms flexor extensor`, got {} fields",
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        };
        let frame = EmgFrame::new(num(fields[0])?, num(fields[1])?, num(fields[2])?);
        if !(frame.t_ms.is_finite() && frame.flexor.is_finite() && frame.extensor.is_finite()) {
            return Err(Error::Parse("non-finite EMG sample".into()));
        }
        Ok(frame)
    }
}

/// Reads a raw EMG stream file body (one record per line, `#` comments and
/// blank lines ignored). Timestamps must be strictly increasing.
pub fn parse_emg_stream(text: &str) -> Result<Vec<EmgFrame>, Error> {
    let mut frames: Vec<EmgFrame> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let frame: EmgFrame = line
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", idx + 1)))?;
        if let Some(prev) = frames.last() {
            if frame.t_ms <= prev.t_ms {
                return Err(Error::Parse(format!(
                    "line {}: timestamp {} not after {}",
                    idx + 1,
                    frame.t_ms,
                    prev.t_ms
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Per-user MYO settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MyoConfig {
    pub threshold_flexor: f64,
    pub threshold_extensor: f64,
    /// Maximum finger speed in degrees per second.
    pub omega_max: f64,
    pub gain_flexor: f64,
    pub gain_extensor: f64,
    pub tau_ms: f64,
}

impl Default for MyoConfig {
    fn default() -> Self {
        Self {
            threshold_flexor: 0.1,
            threshold_extensor: 0.1,
            omega_max: 90.0,
            gain_flexor: 1.0,
            gain_extensor: 1.0,
            tau_ms: 50.0,
        }
    }
}

impl MyoConfig {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, t) in [
            ("threshold_flexor", self.threshold_flexor),
            ("threshold_extensor", self.threshold_extensor),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        for (name, v) in [
            ("omega_max", self.omega_max),
            ("gain_flexor", self.gain_flexor),
            ("gain_extensor", self.gain_extensor),
            ("tau_ms", self.tau_ms),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Same settings with flexor and extensor roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            threshold_flexor: self.threshold_extensor,
            threshold_extensor: self.threshold_flexor,
            gain_flexor: self.gain_extensor,
            gain_extensor: self.gain_flexor,
            ..self.clone()
        }
    }
}

/// Smoothed envelope of both channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeState {
    pub flexor: f64,
    pub extensor: f64,
    pub last_t_ms: Option<f64>,
    pub gain_flexor: f64,
    pub gain_extensor: f64,
    pub tau_ms: f64,
}

impl EnvelopeState {
    pub fn new(cfg: &MyoConfig) -> Self {
        Self {
            flexor: 0.0,
            extensor: 0.0,
            last_t_ms: None,
            gain_flexor: cfg.gain_flexor,
            gain_extensor: cfg.gain_extensor,
            tau_ms: cfg.tau_ms,
        }
    }

    /// Envelope with explicit channel values, for driving `resolve_command`
    /// directly.
    pub fn with_levels(flexor: f64, extensor: f64) -> Self {
        Self {
            flexor,
            extensor,
            ..Self::new(&MyoConfig::default())
        }
    }

    /// Advances both channels to `frame.t_ms`. The first frame only anchors the
    /// clock.
    pub fn update(&self, frame: &EmgFrame) -> Result<Self, Error> {
        if !(frame.t_ms.is_finite() && frame.flexor.is_finite() && frame.extensor.is_finite()) {
            return Err(Error::RejectedInput("non-finite EMG frame".into()));
        }
        let dt = match self.last_t_ms {
            Some(last) if frame.t_ms < last => {
                return Err(Error::RejectedInput(format!(
                    "EMG timestamp {} precedes {}",
                    frame.t_ms, last
                )))
            }
            Some(last) => frame.t_ms - last,
            None => 0.0,
        };
        let alpha = 1.0 - (-dt / self.tau_ms).exp();
        let target_f = (frame.flexor.abs() * self.gain_flexor).clamp(0.0, 1.0);
        let target_e = (frame.extensor.abs() * self.gain_extensor).clamp(0.0, 1.0);
        Ok(Self {
            flexor: (self.flexor + alpha * (target_f - self.flexor)).clamp(0.0, 1.0),
            extensor: (self.extensor + alpha * (target_e - self.extensor)).clamp(0.0, 1.0),
            last_t_ms: Some(frame.t_ms),
            ..*self
        })
    }
}

/// Open/close intent derived from the envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "speed")]
pub enum MotionCommand {
    /// Close at the given speed (deg/s).
    Close(f64),
    /// Open at the given speed (deg/s).
    Open(f64),
    Hold,
}

impl MotionCommand {
    pub fn speed(&self) -> f64 {
        match *self {
            MotionCommand::Close(s) | MotionCommand::Open(s) => s,
            MotionCommand::Hold => 0.0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MotionCommand::Close(_) => "close",
            MotionCommand::Open(_) => "open",
            MotionCommand::Hold => "hold",
        }
    }

    /// Close ↔ Open, Hold unchanged.
    pub fn mirrored(&self) -> Self {
        match *self {
            MotionCommand::Close(s) => MotionCommand::Open(s),
            MotionCommand::Open(s) => MotionCommand::Close(s),
            MotionCommand::Hold => MotionCommand::Hold,
        }
    }
}

fn activation(envelope: f64, threshold: f64) -> f64 {
    ((envelope - threshold) / (1.0 - threshold)).max(0.0)
}

/// Thresholds both envelopes and maps the dominant activation onto speed.
pub fn resolve_command(env: &EnvelopeState, cfg: &MyoConfig) -> MotionCommand {
    let a_f = activation(env.flexor, cfg.threshold_flexor);
    let a_e = activation(env.extensor, cfg.threshold_extensor);
    if a_f > a_e {
        MotionCommand::Close((cfg.omega_max * a_f).min(cfg.omega_max))
    } else if a_e > a_f {
        MotionCommand::Open((cfg.omega_max * a_e).min(cfg.omega_max))
    } else {
        // both zero, or an exact co-activation tie
        MotionCommand::Hold
    }
}

/// Stateful wrapper used by the session loop.
#[derive(Debug, Clone)]
pub struct Myo {
    cfg: MyoConfig,
    env: EnvelopeState,
}

impl Myo {
    pub fn new(cfg: MyoConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let env = EnvelopeState::new(&cfg);
        Ok(Self { cfg, env })
    }

    pub fn config(&self) -> &MyoConfig {
        &self.cfg
    }

    pub fn envelope(&self) -> &EnvelopeState {
        &self.env
    }

    pub fn push(&mut self, frame: &EmgFrame) -> Result<MotionCommand, Error> {
        self.env = self.env.update(frame)?;
        Ok(self.command())
    }

    pub fn command(&self) -> MotionCommand {
        resolve_command(&self.env, &self.cfg)
    }
}
