//! Gaze-driven grasp selection panel.
//!
//! Nine buttons sit in a band of the normalized view. A button fires once the
//! gaze has stayed on it continuously for the dwell threshold; it then stays
//! disarmed until the gaze leaves it. Leaving a button, or losing tracking,
//! resets the dwell clock.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::hand::GraspType;
use crate::Error;

pub const BUTTON_COUNT: usize = 9;
pub const DEFAULT_DWELL_MS: f64 = 200.0;
/// Shortest dwell that still reads as a deliberate fixation.
pub const MIN_DWELL_MS: f64 = 120.0;
/// Slack for accumulated floating-point error in sample timestamps.
pub const DWELL_EPS_MS: f64 = 1e-6;

pub type ButtonId = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum ButtonRole {
    Grasp { grasp: GraspType },
    Reserved,
}

/// Axis-aligned button, half-open on the right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Button {
    pub id: ButtonId,
    #[serde(flatten)]
    pub role: ButtonRole,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Button {
    fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0() <= x && x < self.x1() && self.y0() <= y && y < self.y1()
    }

    fn overlaps(&self, other: &Button) -> bool {
        self.x0() < other.x1()
            && other.x0() < self.x1()
            && self.y0() < other.y1()
            && other.y0() < self.y1()
    }

    pub fn grasp(&self) -> Option<GraspType> {
        match self.role {
            ButtonRole::Grasp { grasp } => Some(grasp),
            ButtonRole::Reserved => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelLayout {
    pub buttons: Vec<Button>,
}

/// Rectangle in normalized view coordinates, used to place the panel band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Default for Band {
    fn default() -> Self {
        Self {
            x0: 0.2,
            y0: 0.05,
            x1: 0.8,
            y1: 0.35,
        }
    }
}

/// 3×3 grid in the upper band: grasp buttons in reading order, reserved
/// buttons on the bottom row.
pub fn default_layout() -> PanelLayout {
    PanelLayout::grid(Band::default())
}

impl PanelLayout {
    /// Lays a 3×3 grid of buttons over `band`, each cell filled to 90%.
    pub fn grid(band: Band) -> Self {
        let cw = (band.x1 - band.x0) / 3.0;
        let ch = (band.y1 - band.y0) / 3.0;
        let buttons = (0..BUTTON_COUNT)
            .map(|i| {
                let (row, col) = (i / 3, i % 3);
                let role = match GraspType::from_index(i as u8) {
                    Ok(grasp) => ButtonRole::Grasp { grasp },
                    Err(_) => ButtonRole::Reserved,
                };
                Button {
                    id: i as ButtonId,
                    role,
                    cx: band.x0 + cw * (col as f64 + 0.5),
                    cy: band.y0 + ch * (row as f64 + 0.5),
                    w: cw * 0.9,
                    h: ch * 0.9,
                }
            })
            .collect();
        Self { buttons }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.buttons.len() != BUTTON_COUNT {
            return Err(Error::Config(format!(
                "panel needs {BUTTON_COUNT} buttons, got {}",
                self.buttons.len()
            )));
        }
        let mut ids: Vec<ButtonId> = self.buttons.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != BUTTON_COUNT {
            return Err(Error::Config("button ids must be unique".into()));
        }
        for grasp in GraspType::ALL {
            let n = self.buttons.iter().filter(|b| b.grasp() == Some(grasp)).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "grasp type {grasp} must appear on exactly one button, found {n}"
                )));
            }
        }
        for b in &self.buttons {
            if !(b.w > 0.0 && b.h > 0.0) || ![b.cx, b.cy, b.w, b.h].iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("button {} has a degenerate rectangle", b.id)));
            }
        }
        for (i, a) in self.buttons.iter().enumerate() {
            for b in &self.buttons[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Config(format!("buttons {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(())
    }

    pub fn button(&self, id: ButtonId) -> Option<&Button> {
        self.buttons.iter().find(|b| b.id == id)
    }

    pub fn button_for(&self, grasp: GraspType) -> &Button {
        self.buttons
            .iter()
            .find(|b| b.grasp() == Some(grasp))
            .expect("validated layout has every grasp type")
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let layout: PanelLayout = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

impl GazeSample {
    pub fn new(t_ms: f64, x: f64, y: f64) -> Self {
        Self {
            t_ms,
            x,
            y,
            valid: true,
        }
    }

    pub fn lost(t_ms: f64) -> Self {
        Self {
            t_ms,
            x: 0.0,
            y: 0.0,
            valid: false,
        }
    }
}

impl fmt::Display for GazeSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.t_ms, self.x, self.y, u8::from(self.valid))
    }
}

impl FromStr for GazeSample {
    type Err = Error;

    /// Parses `t_ms x y valid`; `valid` is `1`/`0` or `true`/`false`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "expected `t_ms x y valid`, got {} fields",
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        };
        let valid = match fields[3] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Parse(format!("bad valid flag {other:?}"))),
        };
        Ok(GazeSample {
            t_ms: num(fields[0])?,
            x: num(fields[1])?,
            y: num(fields[2])?,
            valid,
        })
    }
}

/// Reads a gaze stream file body; timestamps must be strictly increasing.
pub fn parse_gaze_stream(text: &str) -> Result<Vec<GazeSample>, Error> {
    let mut out: Vec<GazeSample> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let s: GazeSample = line
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", idx + 1)))?;
        if out.last().is_some_and(|p| s.t_ms <= p.t_ms) {
            return Err(Error::Parse(format!("line {}: timestamp not increasing", idx + 1)));
        }
        out.push(s);
    }
    Ok(out)
}

/// Button under the gaze point, if any.
pub fn hit_test(layout: &PanelLayout, sample: &GazeSample) -> Option<ButtonId> {
    if !sample.valid {
        return None;
    }
    layout
        .buttons
        .iter()
        .find(|b| b.contains(sample.x, sample.y))
        .map(|b| b.id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellState {
    pub current: Option<ButtonId>,
    /// Time the gaze entered `current`.
    pub entered_ms: f64,
    pub accumulated_ms: f64,
    pub armed: bool,
    pub threshold_ms: f64,
    pub last_t_ms: Option<f64>,
}

impl DwellState {
    pub fn new(threshold_ms: f64) -> Result<Self, Error> {
        if !threshold_ms.is_finite() || threshold_ms < MIN_DWELL_MS {
            return Err(Error::Config(format!(
                "dwell threshold must be at least {MIN_DWELL_MS} ms, got {threshold_ms}"
            )));
        }
        Ok(Self {
            current: None,
            entered_ms: 0.0,
            accumulated_ms: 0.0,
            armed: true,
            threshold_ms,
            last_t_ms: None,
        })
    }

    /// Dwell progress on the current button in [0, 1].
    pub fn progress(&self) -> f64 {
        if self.current.is_none() || !self.armed {
            return 0.0;
        }
        (self.accumulated_ms / self.threshold_ms).clamp(0.0, 1.0)
    }
}

impl Default for DwellState {
    fn default() -> Self {
        Self::new(DEFAULT_DWELL_MS).expect("default threshold is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub t_ms: f64,
    pub button: ButtonId,
    pub grasp: Option<GraspType>,
}

/// Advances the dwell detector by one sample; returns the id of a button that
/// fired on this sample.
pub fn dwell_update(
    state: &DwellState,
    hit: Option<ButtonId>,
    t_ms: f64,
) -> Result<(DwellState, Option<ButtonId>), Error> {
    if let Some(last) = state.last_t_ms {
        if t_ms < last {
            return Err(Error::RejectedInput(format!(
                "gaze timestamp {t_ms} precedes {last}"
            )));
        }
    }
    let mut next = DwellState {
        last_t_ms: Some(t_ms),
        ..*state
    };
    if hit != state.current || state.last_t_ms.is_none() {
        next.current = hit;
        next.entered_ms = t_ms;
        next.accumulated_ms = 0.0;
        next.armed = true;
        return Ok((next, None));
    }
    let Some(button) = hit else {
        return Ok((next, None));
    };
    if !next.armed {
        return Ok((next, None));
    }
    next.accumulated_ms = t_ms - next.entered_ms;
    if next.accumulated_ms >= next.threshold_ms - DWELL_EPS_MS {
        next.armed = false;
        return Ok((next, Some(button)));
    }
    Ok((next, None))
}

/// Layout plus dwell detector, fed one gaze sample at a time.
#[derive(Debug, Clone)]
pub struct GazePanel {
    layout: PanelLayout,
    dwell: DwellState,
}

impl GazePanel {
    pub fn new(layout: PanelLayout, threshold_ms: f64) -> Result<Self, Error> {
        layout.validate()?;
        Ok(Self {
            layout,
            dwell: DwellState::new(threshold_ms)?,
        })
    }

    pub fn layout(&self) -> &PanelLayout {
        &self.layout
    }

    pub fn dwell(&self) -> &DwellState {
        &self.dwell
    }

    pub fn push(&mut self, sample: &GazeSample) -> Result<Option<TriggerEvent>, Error> {
        let hit = hit_test(&self.layout, sample);
        let (next, fired) = dwell_update(&self.dwell, hit, sample.t_ms)?;
        self.dwell = next;
        Ok(fired.map(|id| TriggerEvent {
            t_ms: sample.t_ms,
            button: id,
            grasp: self.layout.button(id).and_then(Button::grasp),
        }))
    }
}
