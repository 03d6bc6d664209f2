//! JSON envelopes exchanged with live clients and stored in input traces.

use imyo_core::analysis::MetricsReport;
use imyo_core::gaze::GazeSample;
use imyo_core::runner::{Input, ProtocolConfig, SessionSnapshot};
use imyo_core::signals::EmgFrame;
use imyo_core::wire::EventRecord;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePayload {
    pub x: f64,
    pub y: f64,
    #[serde(default = "yes")]
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgPayload {
    pub flexor: f64,
    pub extensor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Control {
    /// Hand position along the reach axis.
    Arm { x: f64 },
    /// Stop the session.
    End,
    /// First line of a stored trace: the protocol the session ran with and
    /// any extra log header keys.
    Start {
        #[serde(default)]
        protocol: Box<ProtocolConfig>,
        #[serde(default, skip_serializing_if = "Map::is_empty")]
        meta: Map<String, Value>,
    },
}

/// Client → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Inbound {
    Gaze { t_ms: f64, payload: GazePayload },
    Emg { t_ms: f64, payload: EmgPayload },
    Control { t_ms: f64, payload: Control },
}

impl Inbound {
    pub fn t_ms(&self) -> f64 {
        match self {
            Inbound::Gaze { t_ms, .. } | Inbound::Emg { t_ms, .. } | Inbound::Control { t_ms, .. } => *t_ms,
        }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        match &mut self {
            Inbound::Gaze { t_ms, .. } | Inbound::Emg { t_ms, .. } | Inbound::Control { t_ms, .. } => *t_ms = t,
        }
        self
    }

    /// The loop input carried by this message; `Start` carries none.
    pub fn to_input(&self) -> Option<Input> {
        Some(match self {
            Inbound::Gaze { t_ms, payload } => Input::Gaze(GazeSample {
                t_ms: *t_ms,
                x: payload.x,
                y: payload.y,
                valid: payload.valid,
            }),
            Inbound::Emg { t_ms, payload } => Input::Emg(EmgFrame::new(*t_ms, payload.flexor, payload.extensor)),
            Inbound::Control { t_ms, payload } => match payload {
                Control::Arm { x } => Input::Arm { t_ms: *t_ms, x: *x },
                Control::End => Input::End { t_ms: *t_ms },
                Control::Start { .. } => return None,
            },
        })
    }

    pub fn from_input(input: &Input) -> Self {
        match *input {
            Input::Gaze(g) => Inbound::Gaze {
                t_ms: g.t_ms,
                payload: GazePayload {
                    x: g.x,
                    y: g.y,
                    valid: g.valid,
                },
            },
            Input::Emg(e) => Inbound::Emg {
                t_ms: e.t_ms,
                payload: EmgPayload {
                    flexor: e.flexor,
                    extensor: e.extensor,
                },
            },
            Input::Arm { t_ms, x } => Inbound::Control {
                t_ms,
                payload: Control::Arm { x },
            },
            Input::End { t_ms } => Inbound::Control {
                t_ms,
                payload: Control::End,
            },
        }
    }

    pub fn start(protocol: &ProtocolConfig) -> Self {
        Self::start_with(protocol, Map::new())
    }

    pub fn start_with(protocol: &ProtocolConfig, meta: Map<String, Value>) -> Self {
        Inbound::Control {
            t_ms: 0.0,
            payload: Control::Start {
                protocol: Box::new(protocol.clone()),
                meta,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutKind {
    /// Sent once on connect: session id, panel layout, workspace.
    Session,
    State,
    Event,
    Metrics,
    Error,
}

/// Server → client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    #[serde(rename = "type")]
    pub kind: OutKind,
    pub t_ms: f64,
    pub payload: Value,
}

impl Outbound {
    pub fn state(snap: &SessionSnapshot) -> Self {
        Self {
            kind: OutKind::State,
            t_ms: snap.t_ms,
            payload: serde_json::to_value(snap).expect("snapshot serializes"),
        }
    }

    pub fn event(rec: &EventRecord) -> Self {
        Self {
            kind: OutKind::Event,
            t_ms: rec.t_ms,
            payload: serde_json::to_value(rec).expect("record serializes"),
        }
    }

    pub fn metrics(report: &MetricsReport, t_ms: f64) -> Self {
        Self {
            kind: OutKind::Metrics,
            t_ms,
            payload: serde_json::to_value(report).expect("report serializes"),
        }
    }

    pub fn error(message: &str, t_ms: f64) -> Self {
        Self {
            kind: OutKind::Error,
            t_ms,
            payload: json!({ "message": message }),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

/// Parses a trace with one inbound envelope per line.
pub fn parse_trace(text: &str) -> Result<Vec<Inbound>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn write_trace(msgs: &[Inbound]) -> String {
    let mut out = String::new();
    for m in msgs {
        out.push_str(&serde_json::to_string(m).expect("envelope serializes"));
        out.push('\n');
    }
    out
}
