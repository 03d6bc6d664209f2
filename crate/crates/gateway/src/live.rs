//! A session driven by external input messages, plus headless replay of a
//! stored trace.
//!
//! Two clocks drive the same loop. With [`Clock::Input`] the message
//! timestamps are authoritative and ticks run lazily as inputs arrive. With
//! [`Clock::Realtime`] the caller ticks on a wall-clock timer and every
//! message is stamped with the tick it is applied before. Both record the
//! stamped messages, so replaying the trace reproduces the log.

use imyo_core::runner::{Input, ProtocolConfig, Session, SessionSetup};
use imyo_core::wire::{EventRecord, SessionLog};
use imyo_core::Error;

use crate::envelope::{Control, Inbound};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Realtime,
    Input,
}

impl std::str::FromStr for Clock {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "realtime" => Ok(Clock::Realtime),
            "input" => Ok(Clock::Input),
            _ => Err(format!("unknown clock {s:?}, expected realtime or input")),
        }
    }
}

pub struct LiveSession {
    session: Session,
    clock: Clock,
    trace: Vec<Inbound>,
    forwarded: usize,
}

impl LiveSession {
    pub fn new(protocol: ProtocolConfig, clock: Clock) -> Result<Self, Error> {
        let trace = vec![Inbound::start(&protocol)];
        Ok(Self {
            session: Session::new(protocol, SessionSetup::default())?,
            clock,
            trace,
            forwarded: 0,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn finished(&self) -> bool {
        self.session.finished()
    }

    /// Applies one client message; the error text is meant for the client.
    pub fn accept(&mut self, msg: Inbound) -> Result<(), String> {
        if matches!(msg, Inbound::Control { payload: Control::Start { .. }, .. }) {
            return Err("start is only valid as the first line of a trace".into());
        }
        let msg = match self.clock {
            Clock::Realtime => msg.with_time(self.session.next_tick_ms()),
            Clock::Input => msg,
        };
        let input = msg.to_input().expect("start handled above");
        self.trace.push(msg);
        match self.session.feed(&input) {
            // An end that arrives after the last trial has nothing left to stop.
            Err(_) if matches!(input, Input::End { .. }) && self.session.finished() => Ok(()),
            r => r.map_err(|e| e.to_string()),
        }
    }

    /// One wall-clock tick.
    pub fn tick(&mut self) {
        let t = self.session.next_tick_ms();
        self.session.advance_through(t);
    }

    /// Ends the session as if the client had sent `end`.
    pub fn close(&mut self) {
        if self.session.finished() {
            return;
        }
        let t = match self.clock {
            Clock::Realtime => self.session.next_tick_ms(),
            Clock::Input => self.session.now_ms(),
        };
        let msg = Inbound::from_input(&Input::End { t_ms: t });
        let _ = self.accept(msg);
    }

    /// Log records not yet handed out.
    pub fn take_events(&mut self) -> Vec<EventRecord> {
        let recs = &self.session.log().records;
        let out = recs[self.forwarded..].to_vec();
        self.forwarded = recs.len();
        out
    }

    pub fn trace(&self) -> &[Inbound] {
        &self.trace
    }

    pub fn log(&self) -> &SessionLog {
        self.session.log()
    }
}

/// Re-runs a stored trace headlessly. The protocol comes from the trace's
/// start line, else from `fallback`, else the defaults; header keys stored
/// on the start line are restored. A trace that stops before the session
/// finishes ends it at the last input time.
pub fn replay(trace: &[Inbound], fallback: Option<ProtocolConfig>) -> Result<SessionLog, Error> {
    let (protocol, meta, rest) = match trace.first() {
        Some(Inbound::Control {
            payload: Control::Start { protocol, meta },
            ..
        }) => ((**protocol).clone(), meta.clone(), &trace[1..]),
        _ => (fallback.unwrap_or_default(), Default::default(), trace),
    };
    let mut live = LiveSession::new(protocol, Clock::Input)?;
    for (k, v) in meta {
        live.session.annotate(&k, v);
    }
    for msg in rest {
        if live.finished() {
            break;
        }
        let _ = live.accept(msg.clone());
    }
    live.close();
    Ok(live.session.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use imyo_core::gaze::GazeSample;
    use imyo_core::hand::GraspType;
    use imyo_core::wire::EventKind;

    fn protocol() -> ProtocolConfig {
        ProtocolConfig {
            blocks: 1,
            seed: 3,
            ..ProtocolConfig::default()
        }
    }

    fn gaze(t: f64, x: f64, y: f64) -> Inbound {
        Inbound::from_input(&Input::Gaze(GazeSample::new(t, x, y)))
    }

    #[test]
    fn realtime_stamps_on_next_tick_and_replays() {
        let mut live = LiveSession::new(protocol(), Clock::Realtime).unwrap();
        let b = *live.session().layout().button_for(GraspType::Pinch);
        for k in 0..40 {
            // Client clocks are ignored in realtime mode.
            if k % 2 == 0 {
                live.accept(gaze(123456.0, b.cx, b.cy)).unwrap();
            }
            live.tick();
        }
        live.close();
        let trace = live.trace().to_vec();
        assert_eq!(trace[1].t_ms(), 10.0);
        assert_eq!(trace[2].t_ms(), 30.0);
        let events = live.take_events();
        assert!(events.iter().any(|r| r.kind == EventKind::GazeTrigger));
        let replayed = replay(&trace, None).unwrap();
        assert_eq!(replayed.to_jsonl(), live.log().to_jsonl());
    }

    #[test]
    fn input_clock_replay_matches() {
        let mut live = LiveSession::new(protocol(), Clock::Input).unwrap();
        let b = *live.session().layout().button_for(GraspType::Hook);
        let mut t = 0.0;
        for _ in 0..30 {
            t += 1000.0 / 60.0;
            live.accept(gaze(t, b.cx, b.cy)).unwrap();
        }
        assert!(live.accept(gaze(1.0, b.cx, b.cy)).is_err());
        live.close();
        let log = live.log().clone();
        assert_eq!(log.records.last().unwrap().get_str("result"), Some("aborted"));
        assert_eq!(replay(live.trace(), None).unwrap(), log);
    }

    #[test]
    fn late_end_runs_the_session_out() {
        let p = ProtocolConfig {
            trial_timeout_ms: 100.0,
            ..protocol()
        };
        let mut live = LiveSession::new(p, Clock::Input).unwrap();
        live.accept(Inbound::from_input(&Input::End { t_ms: 1e9 })).unwrap();
        assert!(live.finished());
        let ends: Vec<_> = live.log().records.iter().filter(|r| r.kind == EventKind::TrialEnd).collect();
        assert_eq!(ends.len(), 24);
        assert!(ends.iter().all(|r| r.get_str("result") == Some("timeout")));
    }

    #[test]
    fn start_message_rejected_from_clients() {
        let mut live = LiveSession::new(protocol(), Clock::Input).unwrap();
        assert!(live.accept(Inbound::start(&protocol())).is_err());
    }

    #[test]
    fn clock_parses() {
        assert_eq!("input".parse::<Clock>().unwrap(), Clock::Input);
        assert!("x".parse::<Clock>().is_err());
    }
}
