//! Scripted virtual subject.
//!
//! Per trial: look at the scene for the reaction latency, fixate the button
//! of the wanted grasp type until it fires, reach, close with the flexor,
//! squeeze, carry to the zone and open with the extensor. Random choices are
//! drawn once at trial start in a fixed order, so runs are reproducible per
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::session::{Input, InputSource, Observation, TrialStage};
use super::Mode;
use crate::gaze::{GazeSample, PanelLayout};
use crate::hand::GraspType;
use crate::signals::EmgFrame;
use crate::world::Workspace;
use crate::Error;

/// Eye-tracker sample period (60 Hz).
pub const GAZE_PERIOD_MS: f64 = 1000.0 / 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub reaction_latency_ms: f64,
    /// Per-axis gaze jitter, in normalized view units.
    pub gaze_noise_sigma: f64,
    pub wrong_button_prob: f64,
    /// After a wrong trigger, look at the right button instead of carrying on.
    pub correct_wrong_button: bool,
    pub emg_rise_ms: f64,
    pub close_level: f64,
    pub open_level: f64,
    pub squeeze_hold_ms: f64,
    pub reach_ms: f64,
    pub close_ms: f64,
    pub transport_ms: f64,
    /// Chance that a Pinch-optimal object is missed by stopping short.
    pub pinch_miss_prob: f64,
    pub miss_offset: f64,
    /// Reaction latency multiplier applied once per block.
    pub reaction_decay: f64,
    /// Where the subject looks when not using the panel.
    pub scene_point: [f64; 2],
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            reaction_latency_ms: 300.0,
            gaze_noise_sigma: 0.0,
            wrong_button_prob: 0.0,
            correct_wrong_button: true,
            emg_rise_ms: 0.0,
            close_level: 1.0,
            open_level: 1.0,
            squeeze_hold_ms: 200.0,
            reach_ms: 1000.0,
            close_ms: 2000.0,
            transport_ms: 2000.0,
            pinch_miss_prob: 0.0,
            miss_offset: 0.12,
            reaction_decay: 1.0,
            scene_point: [0.5, 0.75],
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("agent config: {e}")))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let probs = [
            ("wrong_button_prob", self.wrong_button_prob),
            ("pinch_miss_prob", self.pinch_miss_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let non_negative = [
            ("reaction_latency_ms", self.reaction_latency_ms),
            ("gaze_noise_sigma", self.gaze_noise_sigma),
            ("emg_rise_ms", self.emg_rise_ms),
            ("squeeze_hold_ms", self.squeeze_hold_ms),
            ("reach_ms", self.reach_ms),
            ("close_ms", self.close_ms),
            ("transport_ms", self.transport_ms),
            ("close_level", self.close_level),
            ("open_level", self.open_level),
            ("miss_offset", self.miss_offset),
        ];
        for (name, v) in non_negative {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.reaction_decay > 0.0 && self.reaction_decay <= 1.0) {
            return Err(Error::Config(format!(
                "reaction_decay must lie in (0, 1], got {}",
                self.reaction_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Select,
    Reach { start: f64 },
    Close { start: f64, contact_at: Option<f64> },
    Transport { start: f64, from_x: f64 },
    Release { start: f64 },
}

#[derive(Debug, Clone)]
struct TrialScript {
    index: usize,
    start_ms: f64,
    optimal: GraspType,
    wrong: Option<GraspType>,
    corrected: bool,
    target_x: f64,
    reaction_ms: f64,
    step: Step,
}

impl TrialScript {
    fn wanted(&self) -> GraspType {
        match self.wrong {
            Some(w) if !self.corrected => w,
            _ => self.optimal,
        }
    }
}

pub struct ScriptedAgent {
    cfg: AgentConfig,
    layout: PanelLayout,
    workspace: Workspace,
    rng: ChaCha8Rng,
    script: Option<TrialScript>,
}

impl ScriptedAgent {
    pub fn new(cfg: AgentConfig, layout: PanelLayout, workspace: Workspace) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self {
            cfg,
            layout,
            workspace,
            rng,
            script: None,
        }
    }

    fn sync(&mut self, obs: &Observation, t: f64) {
        let Some(view) = &obs.trial else {
            self.script = None;
            return;
        };
        if self.script.as_ref().is_none_or(|s| s.index != view.index) {
            let optimal = view.object.optimal;
            // Always draw the same values so the stream stays aligned.
            let u_wrong: f64 = self.rng.random();
            let k_wrong = self.rng.random_range(0..GraspType::ALL.len() - 1);
            let u_miss: f64 = self.rng.random();
            let others: Vec<GraspType> = GraspType::ALL.into_iter().filter(|g| *g != optimal).collect();
            let wrong = (u_wrong < self.cfg.wrong_button_prob).then(|| others[k_wrong]);
            let miss = optimal == GraspType::Pinch && u_miss < self.cfg.pinch_miss_prob;
            let target_x = self.workspace.object_x - if miss { self.cfg.miss_offset } else { 0.0 };
            self.script = Some(TrialScript {
                index: view.index,
                start_ms: view.start_ms,
                optimal,
                wrong,
                corrected: false,
                target_x,
                reaction_ms: self.cfg.reaction_latency_ms * self.cfg.reaction_decay.powi(view.block as i32),
                step: Step::Select,
            });
        }
        let cfg = &self.cfg;
        let script = self.script.as_mut().expect("set above");
        loop {
            let next = match script.step {
                Step::Select => {
                    let wanted = script.wanted();
                    match view.last_trigger.and_then(|e| e.grasp) {
                        Some(g) if g == wanted => {
                            if script.wrong.is_some() && !script.corrected && cfg.correct_wrong_button {
                                script.corrected = true;
                                None
                            } else {
                                Some(Step::Reach { start: t })
                            }
                        }
                        _ => None,
                    }
                }
                Step::Reach { start } if t >= start + cfg.reach_ms => Some(Step::Close {
                    start: start + cfg.reach_ms,
                    contact_at: None,
                }),
                Step::Reach { .. } => None,
                Step::Close { start, contact_at } => {
                    if contact_at.is_none() && view.stage != TrialStage::Free {
                        Some(Step::Close {
                            start,
                            contact_at: Some(t),
                        })
                    } else {
                        let squeezed = contact_at.is_some_and(|c| t >= c + cfg.squeeze_hold_ms);
                        let carry = obs.mode == Mode::Transport
                            && view.stage == TrialStage::Held
                            && squeezed
                            && t >= start + cfg.close_ms;
                        carry.then_some(Step::Transport {
                            start: t,
                            from_x: script.target_x,
                        })
                    }
                }
                Step::Transport { start, .. } if t >= start + cfg.transport_ms => Some(Step::Release { start: t }),
                Step::Transport { .. } | Step::Release { .. } => None,
            };
            match next {
                Some(step) => script.step = step,
                None => break,
            }
        }
    }

    fn gaze_at(&mut self, t: f64) -> GazeSample {
        let [sx, sy] = self.cfg.scene_point;
        let (mut x, mut y) = (sx, sy);
        if let Some(s) = &self.script {
            if s.step == Step::Select && t >= s.start_ms + s.reaction_ms {
                let b = self.layout.button_for(s.wanted());
                (x, y) = (b.cx, b.cy);
            }
        }
        if self.cfg.gaze_noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.cfg.gaze_noise_sigma).expect("sigma validated");
            x += n.sample(&mut self.rng);
            y += n.sample(&mut self.rng);
        }
        GazeSample::new(t, x, y)
    }

    /// Arm position, flexor and extensor at tick time `t`.
    fn motor(&self, t: f64) -> (f64, f64, f64) {
        let cfg = &self.cfg;
        let ramp = |since: f64| {
            if cfg.emg_rise_ms <= 0.0 {
                1.0
            } else {
                (since / cfg.emg_rise_ms).clamp(0.0, 1.0)
            }
        };
        let frac = |since: f64, span: f64| if span <= 0.0 { 1.0 } else { (since / span).clamp(0.0, 1.0) };
        let Some(s) = &self.script else {
            return (0.0, 0.0, 0.0);
        };
        let zone = self.workspace.zone_center();
        match s.step {
            Step::Select => (0.0, 0.0, 0.0),
            Step::Reach { start } => (s.target_x * frac(t - start, cfg.reach_ms), 0.0, 0.0),
            Step::Close { start, contact_at } => {
                let relaxed = contact_at.is_some_and(|c| t >= c + cfg.squeeze_hold_ms);
                let f = if relaxed { 0.0 } else { cfg.close_level * ramp(t - start) };
                (s.target_x, f, 0.0)
            }
            Step::Transport { start, from_x } => {
                let x = from_x + (zone - from_x) * frac(t - start, cfg.transport_ms);
                (x, 0.0, 0.0)
            }
            Step::Release { start } => (zone, 0.0, cfg.open_level * ramp(t - start)),
        }
    }
}

impl InputSource for ScriptedAgent {
    fn gaze_inputs(&mut self, obs: &Observation, from_ms: f64, to_ms: f64) -> Vec<Input> {
        self.sync(obs, obs.next_tick_ms);
        let mut out = Vec::new();
        let mut j = (from_ms / GAZE_PERIOD_MS).floor() as i64;
        loop {
            let g = j as f64 * 1000.0 / 60.0;
            if g > to_ms {
                break;
            }
            if g > from_ms {
                out.push(Input::Gaze(self.gaze_at(g)));
            }
            j += 1;
        }
        out
    }

    fn motor_inputs(&mut self, obs: &Observation, t_ms: f64) -> Vec<Input> {
        self.sync(obs, t_ms);
        let (x, flexor, extensor) = self.motor(t_ms);
        vec![
            Input::Arm { t_ms, x },
            Input::Emg(EmgFrame::new(t_ms, flexor, extensor)),
        ]
    }
}
