//! Six-motor hand model.
//!
//! Every grasp type is a one-dimensional synergy: a path parameter `s` runs
//! from full-open (0) through the pre-shape posture (`s_pre`) to fully closed
//! (1), and the six motor angles are piecewise-linear in `s`. The grasp type
//! may only change while the hand is between full-open and pre-shape.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::signals::MotionCommand;
use crate::Error;

pub const MOTORS: usize = 6;
pub const DEFAULT_S_PRE: f64 = 0.5;
pub const PHASE_EPS: f64 = 1e-6;
pub const MAX_JOINT_DEG: f64 = 90.0;

/// Motor angles in degrees: thumb rotation, thumb flexion, index, middle,
/// ring, little.
pub type Angles = [f64; MOTORS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GraspType {
    Cylindrical,
    Spherical,
    Tripod,
    Pinch,
    Lateral,
    Hook,
}

impl GraspType {
    pub const ALL: [GraspType; 6] = [
        GraspType::Cylindrical,
        GraspType::Spherical,
        GraspType::Tripod,
        GraspType::Pinch,
        GraspType::Lateral,
        GraspType::Hook,
    ];

    /// Wire index.
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(idx: u8) -> Result<Self, Error> {
        Self::ALL
            .get(idx as usize)
            .copied()
            .ok_or(Error::InvalidIndex(idx))
    }

    pub fn name(self) -> &'static str {
        match self {
            GraspType::Cylindrical => "Cylindrical",
            GraspType::Spherical => "Spherical",
            GraspType::Tripod => "Tripod",
            GraspType::Pinch => "Pinch",
            GraspType::Lateral => "Lateral",
            GraspType::Hook => "Hook",
        }
    }
}

impl fmt::Display for GraspType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    pub preshape: Angles,
    pub closed: Angles,
    /// Thumb-finger gap at full-open, in cm.
    pub open_aperture_cm: f64,
}

impl GraspParams {
    fn validate(&self, grasp: GraspType) -> Result<(), Error> {
        for i in 0..MOTORS {
            let (p, c) = (self.preshape[i], self.closed[i]);
            if !(0.0 <= p && p <= c && c <= MAX_JOINT_DEG) {
                return Err(Error::Config(format!(
                    "{grasp}: motor {i} needs 0 <= preshape ({p}) <= closed ({c}) <= {MAX_JOINT_DEG}"
                )));
            }
        }
        if !(self.open_aperture_cm > 0.0 && self.open_aperture_cm.is_finite()) {
            return Err(Error::Config(format!("{grasp}: open aperture must be positive")));
        }
        if self.closed.iter().all(|&c| c == 0.0) {
            return Err(Error::Config(format!("{grasp}: no motor moves")));
        }
        Ok(())
    }
}

/// Motion parameters for all six grasp types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<GraspType, GraspParams>", into = "BTreeMap<GraspType, GraspParams>")]
pub struct GraspTable {
    entries: [GraspParams; 6],
}

impl GraspTable {
    pub fn new(entries: [GraspParams; 6]) -> Result<Self, Error> {
        for (g, p) in GraspType::ALL.iter().zip(&entries) {
            p.validate(*g)?;
        }
        Ok(Self { entries })
    }

    pub fn get(&self, grasp: GraspType) -> &GraspParams {
        &self.entries[grasp.index() as usize]
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

impl TryFrom<BTreeMap<GraspType, GraspParams>> for GraspTable {
    type Error = Error;

    fn try_from(mut map: BTreeMap<GraspType, GraspParams>) -> Result<Self, Error> {
        let mut take = |g: GraspType| {
            map.remove(&g)
                .ok_or_else(|| Error::Config(format!("grasp table is missing {g}")))
        };
        let entries = [
            take(GraspType::Cylindrical)?,
            take(GraspType::Spherical)?,
            take(GraspType::Tripod)?,
            take(GraspType::Pinch)?,
            take(GraspType::Lateral)?,
            take(GraspType::Hook)?,
        ];
        GraspTable::new(entries)
    }
}

impl From<GraspTable> for BTreeMap<GraspType, GraspParams> {
    fn from(t: GraspTable) -> Self {
        GraspType::ALL.into_iter().zip(t.entries).collect()
    }
}

impl Default for GraspTable {
    /// Declared postures; tuned by hand, not measured.
    fn default() -> Self {
        let p = |preshape: Angles, closed: Angles, open_aperture_cm: f64| GraspParams {
            preshape,
            closed,
            open_aperture_cm,
        };
        GraspTable::new([
            p([60., 15., 20., 20., 20., 20.], [70., 45., 70., 70., 70., 70.], 9.0),
            p([50., 15., 25., 25., 25., 25.], [60., 45., 60., 60., 60., 60.], 9.5),
            p([70., 20., 25., 25., 60., 60.], [75., 50., 55., 55., 90., 90.], 7.0),
            // thumb and index only
            p([75., 20., 25., 0., 0., 0.], [80., 50., 55., 0., 0., 0.], 6.0),
            p([0., 10., 60., 60., 60., 60.], [0., 45., 80., 80., 80., 80.], 5.0),
            p([0., 0., 45., 45., 45., 45.], [0., 0., 90., 90., 90., 90.], 6.0),
        ])
        .expect("default grasp table is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    FullOpen,
    PreShapeZone,
    BeyondPreShape,
    FullyClosed,
}

impl Phase {
    pub fn switch_allowed(self) -> bool {
        matches!(self, Phase::FullOpen | Phase::PreShapeZone)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [
            Phase::FullOpen,
            Phase::PreShapeZone,
            Phase::BeyondPreShape,
            Phase::FullyClosed,
        ]
        .get(code as usize)
        .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub active: GraspType,
    /// Path parameter in [0, 1].
    pub s: f64,
    pub contact: bool,
    pub s_pre: f64,
}

impl HandState {
    pub fn new(active: GraspType) -> Self {
        Self {
            active,
            s: 0.0,
            contact: false,
            s_pre: DEFAULT_S_PRE,
        }
    }

    pub fn at(active: GraspType, s: f64) -> Self {
        Self {
            s,
            ..Self::new(active)
        }
    }

    pub fn phase(&self) -> Phase {
        phase_of(self)
    }

    /// Fingers stopped by an object surface at path value `s_surface`.
    pub fn grip_at(&self, s_surface: f64) -> Self {
        Self {
            s: self.s.min(s_surface.clamp(0.0, 1.0)),
            contact: true,
            ..*self
        }
    }
}

pub fn phase_of(state: &HandState) -> Phase {
    let s = state.s;
    if s <= PHASE_EPS {
        Phase::FullOpen
    } else if s >= 1.0 - PHASE_EPS {
        Phase::FullyClosed
    } else if s <= state.s_pre {
        Phase::PreShapeZone
    } else {
        Phase::BeyondPreShape
    }
}

/// Motor angles for grasp parameters `p` at path value `s`.
pub fn angles_at(p: &GraspParams, s: f64, s_pre: f64) -> Angles {
    std::array::from_fn(|i| {
        if s <= s_pre {
            p.preshape[i] * (s / s_pre)
        } else {
            let u = (s - s_pre) / (1.0 - s_pre);
            p.preshape[i] + (p.closed[i] - p.preshape[i]) * u
        }
    })
}

/// Steepest motor slope along the path, in degrees per unit `s`.
pub fn path_rate(p: &GraspParams, s_pre: f64) -> f64 {
    (0..MOTORS)
        .map(|i| {
            let a = p.preshape[i] / s_pre;
            let b = (p.closed[i] - p.preshape[i]) / (1.0 - s_pre);
            a.max(b)
        })
        .fold(0.0, f64::max)
}

/// Grasp table plus the pure transition functions over `HandState`.
#[derive(Debug, Clone, Default)]
pub struct HandModel {
    pub table: GraspTable,
}

impl HandModel {
    pub fn new(table: GraspTable) -> Self {
        Self { table }
    }

    pub fn angles(&self, state: &HandState) -> Angles {
        angles_at(self.table.get(state.active), state.s, state.s_pre)
    }

    pub fn aperture(&self, state: &HandState) -> f64 {
        aperture(self.table.get(state.active), state)
    }

    /// Applies a grasp-type switch request. Requests outside the switch
    /// window are dropped, not queued.
    pub fn request_grasp_type(&self, state: &HandState, idx: u8) -> Result<(HandState, bool), Error> {
        let grasp = GraspType::from_index(idx)?;
        if phase_of(state).switch_allowed() {
            Ok((HandState { active: grasp, ..*state }, true))
        } else {
            Ok((*state, false))
        }
    }

    /// Integrates one motion command over `dt_ms`.
    pub fn step(&self, state: &HandState, cmd: MotionCommand, dt_ms: f64) -> HandState {
        let rate = path_rate(self.table.get(state.active), state.s_pre);
        let ds = |speed: f64| speed / rate * dt_ms / 1000.0;
        match cmd {
            MotionCommand::Hold => *state,
            MotionCommand::Close(_) if state.contact => *state,
            MotionCommand::Close(speed) => HandState {
                s: (state.s + ds(speed)).min(1.0),
                ..*state
            },
            MotionCommand::Open(speed) => HandState {
                s: (state.s - ds(speed)).max(0.0),
                contact: false,
                ..*state
            },
        }
    }
}

/// Thumb-finger gap in cm, closing linearly with `s`.
pub fn aperture(p: &GraspParams, state: &HandState) -> f64 {
    (p.open_aperture_cm * (1.0 - state.s)).max(0.0)
}
