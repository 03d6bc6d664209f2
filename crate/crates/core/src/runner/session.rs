//! Fixed-step session loop.
//!
//! Inputs stamped in `(t[k-1], t[k]]` are applied before tick `k` runs. A
//! tick resolves the current motion command, steps the hand, then applies the
//! world rules for the active trial. Trials follow each other without a gap:
//! the next `TrialStart` is logged on the same tick as the previous
//! `TrialEnd`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::agent::{AgentConfig, ScriptedAgent};
use super::schedule::schedule_session;
use super::{Mode, ProtocolConfig};
use crate::gaze::{default_layout, ButtonId, GazePanel, GazeSample, PanelLayout, TriggerEvent};
use crate::hand::{Angles, GraspTable, GraspType, HandModel, HandState, Phase};
use crate::signals::{EmgFrame, MotionCommand, Myo};
use crate::wire::{encode, to_hex, EventKind, EventRecord, FrameDecoder, LogHeader, Message, SessionLog};
use crate::world::{
    contact_check, grasp_evaluate, release_check, surface_s, Catalog, CompatibilityMatrix, GraspOutcome,
    ObjectSpec, ReleaseOutcome,
};
use crate::Error;

/// One timestamped input to the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", rename_all = "lowercase")]
pub enum Input {
    Gaze(GazeSample),
    Emg(EmgFrame),
    /// Position of the hand along the reach axis.
    Arm { t_ms: f64, x: f64 },
    /// Stops the session; an open trial ends as aborted.
    End { t_ms: f64 },
}

impl Input {
    pub fn t_ms(&self) -> f64 {
        match *self {
            Input::Gaze(g) => g.t_ms,
            Input::Emg(e) => e.t_ms,
            Input::Arm { t_ms, .. } | Input::End { t_ms } => t_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialStage {
    /// Object on the table, not touched.
    Free,
    /// Fingers on the object, squeeze building up.
    Contact,
    /// Object held and moving with the arm.
    Held,
}

/// Static inputs of a session besides the protocol.
#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub catalog: Catalog,
    pub table: GraspTable,
    pub matrix: CompatibilityMatrix,
    pub layout: PanelLayout,
}

impl Default for SessionSetup {
    fn default() -> Self {
        Self {
            catalog: Catalog::builtin(),
            table: GraspTable::default(),
            matrix: CompatibilityMatrix::default(),
            layout: default_layout(),
        }
    }
}

#[derive(Debug, Clone)]
struct ActiveTrial {
    index: usize,
    block: usize,
    trial: usize,
    object: ObjectSpec,
    start_ms: f64,
    stage: TrialStage,
    squeeze_ms: f64,
    last_trigger: Option<TriggerEvent>,
}

/// What a subject can see of the session before a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t_ms: f64,
    pub next_tick_ms: f64,
    pub mode: Mode,
    pub hand: HandState,
    pub arm_x: f64,
    pub trial: Option<TrialView>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialView {
    pub index: usize,
    pub block: usize,
    pub object: ObjectSpec,
    pub start_ms: f64,
    pub stage: TrialStage,
    /// Latest panel trigger within this trial.
    pub last_trigger: Option<TriggerEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatus {
    pub index: usize,
    pub block: usize,
    pub trial: usize,
    pub object: u32,
    pub name: String,
    pub optimal: GraspType,
    pub stage: TrialStage,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellStatus {
    pub button: Option<ButtonId>,
    pub progress: f64,
}

/// Full state shown to a live client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub t_ms: f64,
    pub s: f64,
    pub theta: Angles,
    pub phase: Phase,
    pub active_type: GraspType,
    pub contact: bool,
    pub aperture_cm: f64,
    pub arm_x: f64,
    pub dwell: DwellStatus,
    pub trial: Option<TrialStatus>,
    pub trials_done: usize,
    pub trials_total: usize,
    pub finished: bool,
}

pub struct Session {
    protocol: ProtocolConfig,
    setup: SessionSetup,
    model: HandModel,
    panel: GazePanel,
    myo: Myo,
    hand: HandState,
    arm_x: f64,
    queue: Vec<(usize, usize, u32)>,
    next_trial: usize,
    trial: Option<ActiveTrial>,
    ticks: u64,
    finished: bool,
    log: SessionLog,
    last_emg: Option<(&'static str, Phase)>,
    link: FrameDecoder,
}

impl Session {
    pub fn new(protocol: ProtocolConfig, setup: SessionSetup) -> Result<Self, Error> {
        protocol.validate(&setup.catalog)?;
        setup.catalog.validate(&setup.table)?;
        let plans = schedule_session(&setup.catalog, protocol.blocks, protocol.seed)?;
        let queue = plans
            .iter()
            .enumerate()
            .flat_map(|(b, plan)| plan.objects.iter().enumerate().map(move |(i, id)| (b, i, *id)))
            .collect();
        let mut meta = Map::new();
        meta.insert("protocol".into(), serde_json::to_value(&protocol)?);
        let log = SessionLog::new(LogHeader {
            meta,
            ..LogHeader::default()
        });
        let mut session = Self {
            panel: GazePanel::new(setup.layout.clone(), protocol.dwell_ms)?,
            myo: Myo::new(protocol.myo.clone())?,
            model: HandModel::new(setup.table.clone()),
            hand: HandState::new(protocol.initial_grasp),
            arm_x: 0.0,
            queue,
            next_trial: 0,
            trial: None,
            ticks: 0,
            finished: false,
            log,
            last_emg: None,
            link: FrameDecoder::new(),
            protocol,
            setup,
        };
        session.start_next_trial(0.0);
        Ok(session)
    }

    /// Adds a key to the log header; only valid before any tick has run.
    pub fn annotate(&mut self, key: &str, value: Value) {
        self.log.header.meta.insert(key.to_owned(), value);
    }

    pub fn protocol(&self) -> &ProtocolConfig {
        &self.protocol
    }

    pub fn layout(&self) -> &PanelLayout {
        self.panel.layout()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.setup.catalog
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        self.log
    }

    pub fn hand(&self) -> &HandState {
        &self.hand
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    /// Time of the last completed tick.
    pub fn now_ms(&self) -> f64 {
        self.ticks as f64 * self.protocol.tick_ms
    }

    pub fn next_tick_ms(&self) -> f64 {
        (self.ticks + 1) as f64 * self.protocol.tick_ms
    }

    pub fn observe(&self) -> Observation {
        Observation {
            t_ms: self.now_ms(),
            next_tick_ms: self.next_tick_ms(),
            mode: self.protocol.mode,
            hand: self.hand,
            arm_x: self.arm_x,
            trial: self.trial.as_ref().map(|t| TrialView {
                index: t.index,
                block: t.block,
                object: t.object.clone(),
                start_ms: t.start_ms,
                stage: t.stage,
                last_trigger: t.last_trigger,
            }),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let dwell = self.panel.dwell();
        let now = self.now_ms();
        SessionSnapshot {
            t_ms: now,
            s: self.hand.s,
            theta: self.model.angles(&self.hand),
            phase: self.hand.phase(),
            active_type: self.hand.active,
            contact: self.hand.contact,
            aperture_cm: self.model.aperture(&self.hand),
            arm_x: self.arm_x,
            dwell: DwellStatus {
                button: dwell.current,
                progress: dwell.progress(),
            },
            trial: self.trial.as_ref().map(|t| TrialStatus {
                index: t.index,
                block: t.block,
                trial: t.trial,
                object: t.object.id,
                name: t.object.name.clone(),
                optimal: t.object.optimal,
                stage: t.stage,
                elapsed_ms: now - t.start_ms,
            }),
            trials_done: self.next_trial - usize::from(self.trial.is_some()),
            trials_total: self.queue.len(),
            finished: self.finished,
        }
    }

    /// Applies one input without advancing the clock. Inputs must not be
    /// older than the last tick or newer than the next one.
    pub fn apply(&mut self, input: &Input) -> Result<(), Error> {
        if self.finished {
            return Err(Error::RejectedInput("session has finished".into()));
        }
        let t = input.t_ms();
        if !t.is_finite() || t < self.now_ms() || t > self.next_tick_ms() {
            return Err(Error::RejectedInput(format!(
                "input at {t} ms outside the window ({}, {}]",
                self.now_ms(),
                self.next_tick_ms()
            )));
        }
        match *input {
            Input::Gaze(sample) => self.push_gaze(&sample),
            Input::Emg(frame) => self.myo.push(&frame).map(|_| ()),
            Input::Arm { x, .. } => {
                if !x.is_finite() {
                    return Err(Error::RejectedInput(format!("arm position {x}")));
                }
                self.arm_x = x;
                Ok(())
            }
            Input::End { t_ms } => {
                self.abort(t_ms, "input ended");
                Ok(())
            }
        }
    }

    /// Runs every tick due strictly before `t_ms`, then applies the input.
    pub fn feed(&mut self, input: &Input) -> Result<(), Error> {
        let t = input.t_ms();
        while !self.finished && self.next_tick_ms() < t {
            self.tick();
        }
        self.apply(input)
    }

    /// Runs every tick due at or before `t_ms`.
    pub fn advance_through(&mut self, t_ms: f64) {
        while !self.finished && self.next_tick_ms() <= t_ms {
            self.tick();
        }
    }

    /// Ends the session early; an open trial is closed as aborted.
    pub fn abort(&mut self, t_ms: f64, reason: &str) {
        if self.finished {
            return;
        }
        let t = t_ms.max(self.now_ms());
        if self.trial.is_some() {
            self.end_trial(t, "aborted", Some(reason));
        }
        self.finished = true;
    }

    fn push_gaze(&mut self, sample: &GazeSample) -> Result<(), Error> {
        let Some(ev) = self.panel.push(sample)? else {
            return Ok(());
        };
        let mut rec = EventRecord::new(ev.t_ms, EventKind::GazeTrigger).with("button", ev.button);
        rec = match ev.grasp {
            Some(g) => rec.with("grasp", g.name()),
            None => rec.with("grasp", Value::Null),
        };
        self.log.append(rec);
        if let Some(t) = self.trial.as_mut() {
            t.last_trigger = Some(ev);
        }
        let Some(grasp) = ev.grasp else {
            return Ok(());
        };
        // The selector and the hand controller only talk through frames.
        let frame = encode(&Message::set_grasp(grasp))?;
        self.link.push(&frame);
        let index = match self.link.next_frame() {
            Some(Ok(Message::SetGraspType { index })) => index,
            other => return Err(Error::Encode(format!("link returned {other:?}"))),
        };
        let (next, accepted) = self.model.request_grasp_type(&self.hand, index)?;
        let ack = encode(&Message::Ack { accepted, index })?;
        let kind = if accepted {
            EventKind::SwitchAccepted
        } else {
            EventKind::SwitchRejected
        };
        self.log.append(
            EventRecord::new(ev.t_ms, kind)
                .with("grasp", grasp.name())
                .with("from", self.hand.active.name())
                .with("s", self.hand.s)
                .with("phase", phase_name(self.hand.phase()))
                .with("frame", to_hex(&frame))
                .with("ack", to_hex(&ack)),
        );
        self.hand = next;
        Ok(())
    }

    /// Advances the clock by one tick.
    pub fn tick(&mut self) {
        if self.finished {
            return;
        }
        self.ticks += 1;
        let t = self.now_ms();
        let dt = self.protocol.tick_ms;
        let cmd = self.myo.command();
        let before = self.hand;
        let mut after = self.model.step(&before, cmd, dt);

        let Some(mut trial) = self.trial.take() else {
            self.hand = after;
            self.log_command(t, cmd);
            return;
        };
        let ws = self.protocol.workspace;
        let obj = trial.object.clone();
        let mut ended: Option<(&str, Option<&str>)> = None;

        match trial.stage {
            TrialStage::Free => {
                let s_surf = surface_s(&self.model, &after, &obj);
                if ws.graspable(self.arm_x)
                    && before.s <= s_surf + 1e-9
                    && contact_check(&self.model, &after, &obj)
                {
                    after = after.grip_at(s_surf);
                    trial.stage = TrialStage::Contact;
                    trial.squeeze_ms = 0.0;
                    self.log.append(
                        EventRecord::new(t, EventKind::Contact)
                            .with("grasp", after.active.name())
                            .with("s", after.s)
                            .with("aperture_cm", self.model.aperture(&after)),
                    );
                } else if after.phase() == Phase::FullyClosed && ws.near_object(self.arm_x) {
                    ended = Some(("failure", Some("no_contact")));
                }
            }
            TrialStage::Contact => match cmd {
                MotionCommand::Open(_) => {
                    let outcome = grasp_evaluate(&before, &obj, trial.squeeze_ms, &self.setup.matrix);
                    debug_assert_eq!(outcome, GraspOutcome::Dropped);
                    ended = Some(("failure", Some("released_early")));
                }
                MotionCommand::Hold => trial.squeeze_ms = 0.0,
                MotionCommand::Close(_) => {
                    trial.squeeze_ms += dt;
                    match grasp_evaluate(&after, &obj, trial.squeeze_ms, &self.setup.matrix) {
                        GraspOutcome::Held { used, optimal } => {
                            trial.stage = TrialStage::Held;
                            self.log.append(
                                EventRecord::new(t, EventKind::Held)
                                    .with("used", used.name())
                                    .with("optimal", optimal),
                            );
                            if self.protocol.mode == Mode::HoldOnly {
                                ended = Some(if optimal {
                                    ("success", None)
                                } else {
                                    ("failure", Some("wrong_type"))
                                });
                            }
                        }
                        GraspOutcome::Dropped if trial.squeeze_ms >= crate::world::SQUEEZE_HOLD_MS => {
                            ended = Some(("failure", Some("dropped")));
                        }
                        _ => {}
                    }
                }
            },
            TrialStage::Held => {
                if let Some(outcome) = release_check(&self.model, &after, &obj, self.arm_x, &ws) {
                    let in_zone = outcome == ReleaseOutcome::Placed;
                    self.log.append(
                        EventRecord::new(t, EventKind::Released)
                            .with("x", self.arm_x)
                            .with("in_zone", in_zone),
                    );
                    if in_zone {
                        self.log.append(EventRecord::new(t, EventKind::Placed).with("x", self.arm_x));
                        ended = Some(if after.active == obj.optimal {
                            ("success", None)
                        } else {
                            ("failure", Some("wrong_type"))
                        });
                    } else {
                        ended = Some(("failure", Some("dropped_outside")));
                    }
                }
            }
        }

        self.hand = after;
        self.log_command(t, cmd);
        if ended.is_none() && t - trial.start_ms >= self.protocol.trial_timeout_ms - 1e-9 {
            let reason = if trial.stage == TrialStage::Held {
                "held_at_timeout"
            } else {
                "time_limit"
            };
            ended = Some(("timeout", Some(reason)));
        }
        self.trial = Some(trial);
        if let Some((result, reason)) = ended {
            self.end_trial(t, result, reason);
            self.start_next_trial(t);
        }
    }

    /// Logs the motion command whenever it or the hand phase changes.
    fn log_command(&mut self, t: f64, cmd: MotionCommand) {
        let key = (cmd.kind(), self.hand.phase());
        if self.last_emg != Some(key) {
            self.last_emg = Some(key);
            self.log.append(
                EventRecord::new(t, EventKind::EmgCommand)
                    .with("cmd", cmd.kind())
                    .with("speed", cmd.speed())
                    .with("s", self.hand.s)
                    .with("phase", phase_name(self.hand.phase())),
            );
        }
    }

    fn end_trial(&mut self, t: f64, result: &str, reason: Option<&str>) {
        let Some(trial) = self.trial.take() else {
            return;
        };
        let mut rec = EventRecord::new(t, EventKind::TrialEnd)
            .with("result", result)
            .with("object", trial.object.id)
            .with("active", self.hand.active.name());
        if let Some(r) = reason {
            rec = rec.with("reason", r);
        }
        self.log.append(rec);
    }

    fn start_next_trial(&mut self, t: f64) {
        let Some(&(block, trial, id)) = self.queue.get(self.next_trial) else {
            self.finished = true;
            return;
        };
        let object = self.setup.catalog.get(id).expect("schedule uses catalog ids").clone();
        self.hand = HandState {
            s: 0.0,
            contact: false,
            ..self.hand
        };
        self.arm_x = 0.0;
        // A resting hand holds; only departures from rest are logged.
        self.last_emg = Some((MotionCommand::Hold.kind(), self.hand.phase()));
        self.log.append(
            EventRecord::new(t, EventKind::TrialStart)
                .with("index", self.next_trial)
                .with("block", block)
                .with("trial", trial)
                .with("object", id)
                .with("name", object.name.as_str())
                .with("optimal", object.optimal.name())
                .with("active", self.hand.active.name()),
        );
        self.trial = Some(ActiveTrial {
            index: self.next_trial,
            block,
            trial,
            object,
            start_ms: t,
            stage: TrialStage::Free,
            squeeze_ms: 0.0,
            last_trigger: None,
        });
        self.next_trial += 1;
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::FullOpen => "FullOpen",
        Phase::PreShapeZone => "PreShapeZone",
        Phase::BeyondPreShape => "BeyondPreShape",
        Phase::FullyClosed => "FullyClosed",
    }
}

/// Produces the inputs for each tick. Gaze is polled first so a subject can
/// react on the same tick to a trigger it caused.
pub trait InputSource {
    /// Inputs stamped in `(from_ms, to_ms]`.
    fn gaze_inputs(&mut self, obs: &Observation, from_ms: f64, to_ms: f64) -> Vec<Input>;
    /// Inputs stamped at `t_ms`, after the gaze inputs were applied.
    fn motor_inputs(&mut self, obs: &Observation, t_ms: f64) -> Vec<Input>;
}

/// A pre-recorded input stream, in time order.
#[derive(Debug, Clone, Default)]
pub struct RecordedInputs {
    inputs: Vec<Input>,
    pos: usize,
}

impl RecordedInputs {
    pub fn new(inputs: Vec<Input>) -> Self {
        Self { inputs, pos: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.pos >= self.inputs.len()
    }
}

impl InputSource for RecordedInputs {
    fn gaze_inputs(&mut self, _obs: &Observation, _from_ms: f64, to_ms: f64) -> Vec<Input> {
        let start = self.pos;
        while self.pos < self.inputs.len() && self.inputs[self.pos].t_ms() <= to_ms {
            self.pos += 1;
        }
        self.inputs[start..self.pos].to_vec()
    }

    fn motor_inputs(&mut self, _obs: &Observation, _t_ms: f64) -> Vec<Input> {
        Vec::new()
    }
}

/// Wraps a source and keeps a copy of every input it produces.
pub struct Recorder<'a> {
    inner: &'a mut dyn InputSource,
    pub inputs: Vec<Input>,
}

impl<'a> Recorder<'a> {
    pub fn new(inner: &'a mut dyn InputSource) -> Self {
        Self {
            inner,
            inputs: Vec::new(),
        }
    }
}

impl InputSource for Recorder<'_> {
    fn gaze_inputs(&mut self, obs: &Observation, from_ms: f64, to_ms: f64) -> Vec<Input> {
        let out = self.inner.gaze_inputs(obs, from_ms, to_ms);
        self.inputs.extend_from_slice(&out);
        out
    }

    fn motor_inputs(&mut self, obs: &Observation, t_ms: f64) -> Vec<Input> {
        let out = self.inner.motor_inputs(obs, t_ms);
        self.inputs.extend_from_slice(&out);
        out
    }
}

/// Drives a session to completion. Rejected inputs are counted and skipped.
pub fn run_with(session: &mut Session, source: &mut dyn InputSource) -> usize {
    let mut rejected = 0;
    while !session.finished() {
        let from = session.now_ms();
        let to = session.next_tick_ms();
        let obs = session.observe();
        for input in source.gaze_inputs(&obs, from, to) {
            rejected += usize::from(session.apply(&input).is_err());
        }
        let obs = session.observe();
        for input in source.motor_inputs(&obs, to) {
            rejected += usize::from(session.apply(&input).is_err());
        }
        session.tick();
    }
    rejected
}

/// Headless session with the scripted subject, default catalog and panel.
pub fn run_session(protocol: &ProtocolConfig, agent: &AgentConfig) -> Result<SessionLog, Error> {
    run_session_with(protocol, agent, SessionSetup::default())
}

pub fn run_session_with(
    protocol: &ProtocolConfig,
    agent: &AgentConfig,
    setup: SessionSetup,
) -> Result<SessionLog, Error> {
    agent.validate()?;
    let mut session = Session::new(protocol.clone(), setup)?;
    session.annotate("agent", json!(agent));
    let mut subject = ScriptedAgent::new(agent.clone(), session.layout().clone(), protocol.workspace);
    run_with(&mut session, &mut subject);
    Ok(session.into_log())
}

/// Per trial, every accepted switch comes before the first motion that takes
/// the hand beyond its pre-shape.
pub fn check_flow_order(log: &SessionLog, s_pre: f64) -> Result<(), String> {
    for trial in log.trials() {
        let mut beyond = None;
        for (i, r) in trial.iter().enumerate() {
            match r.kind {
                EventKind::EmgCommand if beyond.is_none() => {
                    if r.get_f64("s").is_some_and(|s| s > s_pre) {
                        beyond = Some(i);
                    }
                }
                EventKind::SwitchAccepted => {
                    if let Some(b) = beyond {
                        return Err(format!(
                            "switch at {} ms after the hand passed its pre-shape at {} ms",
                            r.t_ms, trial[b].t_ms
                        ));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(())
}
