//! Success rates and task times per trial, block, grasp type and object.
//!
//! Window conventions, all measured from `TrialStart`:
//! - switching time runs to the last trigger of the optimal type, and only
//!   counts when the final type is correct;
//! - transport time runs to `Placed`, hold time to `Held`, both only on
//!   successful trials.
//!
//! The final type is the type used at `Held`; trials that never reach
//! `Held` fall back to the active type at `TrialEnd`. Aborted trials are
//! left out.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::stats::{box_summary, BoxSummary};
use crate::hand::GraspType;
use crate::runner::Mode;
use crate::wire::{EventKind, EventRecord, SessionLog};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub index: usize,
    pub block: usize,
    pub object: u32,
    pub name: String,
    pub optimal: GraspType,
    pub final_type: GraspType,
    pub correct_type: bool,
    pub held: bool,
    pub placed: bool,
    pub result: String,
    pub triggers: usize,
    pub t_g_ms: Option<f64>,
    pub t_pt_ms: Option<f64>,
    pub t_ht_ms: Option<f64>,
}

impl TrialRow {
    pub fn task_success(&self, mode: Mode) -> bool {
        self.correct_type
            && match mode {
                Mode::Transport => self.placed,
                Mode::HoldOnly => self.held,
            }
    }

    /// Transport or hold time, whichever the mode measures.
    pub fn task_time(&self, mode: Mode) -> Option<f64> {
        match mode {
            Mode::Transport => self.t_ht_ms,
            Mode::HoldOnly => self.t_pt_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub n: usize,
    /// `None` when there are no trials.
    pub rate: Option<f64>,
}

impl Rate {
    fn of(successes: usize, n: usize) -> Self {
        Self {
            successes,
            n,
            rate: (n > 0).then(|| successes as f64 / n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Times {
    pub values_ms: Vec<f64>,
    pub summary: Option<BoxSummary>,
}

impl Times {
    fn of(values_ms: Vec<f64>) -> Self {
        let summary = box_summary(&values_ms);
        Self { values_ms, summary }
    }

    pub fn median(&self) -> Option<f64> {
        self.summary.map(|s| s.median)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub key: String,
    #[serde(rename = "SR_G")]
    pub sr_g: Rate,
    #[serde(rename = "T_G")]
    pub t_g: Option<BoxSummary>,
    pub sr_task: Rate,
    pub t_task: Option<BoxSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub n_trials: usize,
    #[serde(rename = "SR_G")]
    pub sr_g: Rate,
    #[serde(rename = "T_G")]
    pub t_g: Times,
    #[serde(rename = "SR_HT", skip_serializing_if = "Option::is_none", default)]
    pub sr_ht: Option<Rate>,
    #[serde(rename = "T_HT", skip_serializing_if = "Option::is_none", default)]
    pub t_ht: Option<Times>,
    #[serde(rename = "SR_PT", skip_serializing_if = "Option::is_none", default)]
    pub sr_pt: Option<Rate>,
    #[serde(rename = "T_PT", skip_serializing_if = "Option::is_none", default)]
    pub t_pt: Option<Times>,
    pub per_block: Vec<Breakdown>,
    pub per_grasp: Vec<Breakdown>,
    pub per_object: Vec<Breakdown>,
    pub trials: Vec<TrialRow>,
}

impl MetricsReport {
    pub fn task_rate(&self) -> Rate {
        match self.mode {
            Mode::Transport => self.sr_ht.expect("transport report"),
            Mode::HoldOnly => self.sr_pt.expect("hold report"),
        }
    }

    pub fn task_times(&self) -> &Times {
        match self.mode {
            Mode::Transport => self.t_ht.as_ref().expect("transport report"),
            Mode::HoldOnly => self.t_pt.as_ref().expect("hold report"),
        }
    }

    fn task_label(&self) -> (&'static str, &'static str) {
        match self.mode {
            Mode::Transport => ("SR-HT", "T-HT"),
            Mode::HoldOnly => ("SR-PT", "T-PT"),
        }
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let (sr_name, t_name) = self.task_label();
        let mut out = String::new();
        let pct = |r: &Rate| match r.rate {
            Some(v) => format!("{:6.1}% ({}/{})", 100.0 * v, r.successes, r.n),
            None => "     - (n=0)".to_owned(),
        };
        let ms = |s: Option<BoxSummary>| match s {
            Some(b) => format!("{:8.1} [{:.1}, {:.1}]", b.median, b.q1, b.q3),
            None => format!("{:>8}", "-"),
        };
        let _ = writeln!(out, "mode {}  trials {}", self.mode.name(), self.n_trials);
        let _ = writeln!(out, "{:<8} {}", "SR-G", pct(&self.sr_g));
        let _ = writeln!(out, "{:<8} {}", sr_name, pct(&self.task_rate()));
        let _ = writeln!(out, "{:<8} {} ms median [IQR]", "T-G", ms(self.t_g.summary));
        let _ = writeln!(out, "{:<8} {} ms median [IQR]", t_name, ms(self.task_times().summary));
        for (title, rows) in [
            ("block", &self.per_block),
            ("grasp", &self.per_grasp),
            ("object", &self.per_object),
        ] {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<22} {:>20} {:>20} {:>10} {:>10}",
                title,
                "SR-G",
                sr_name,
                "T-G med",
                format!("{t_name} med")
            );
            for b in rows {
                let med = |s: Option<BoxSummary>| s.map_or("-".to_owned(), |s| format!("{:.1}", s.median));
                let _ = writeln!(
                    out,
                    "{:<22} {:>20} {:>20} {:>10} {:>10}",
                    b.key,
                    pct(&b.sr_g),
                    pct(&b.sr_task),
                    med(b.t_g),
                    med(b.t_task)
                );
            }
        }
        out
    }

    /// One row per trial.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from(
            "index,block,object,name,optimal,final_type,correct_type,held,placed,result,triggers,t_g_ms,t_pt_ms,t_ht_ms\n",
        );
        for r in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},\"{}\",{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.block,
                r.object,
                r.name.replace('"', "\"\""),
                r.optimal,
                r.final_type,
                r.correct_type,
                r.held,
                r.placed,
                r.result,
                r.triggers,
                opt(r.t_g_ms),
                opt(r.t_pt_ms),
                opt(r.t_ht_ms)
            );
        }
        out
    }
}

fn required<T>(v: Option<T>, rec: &EventRecord, key: &str) -> Result<T, Error> {
    v.ok_or_else(|| Error::InvalidLog(format!("{:?} at {} ms lacks a valid {key:?}", rec.kind, rec.t_ms)))
}

fn trial_row(records: &[EventRecord]) -> Result<Option<TrialRow>, Error> {
    let start = &records[0];
    let end = records.last().expect("trial has an end");
    let result = required(end.get_str("result"), end, "result")?.to_owned();
    if result == "aborted" {
        return Ok(None);
    }
    let optimal = required(start.get_grasp("optimal"), start, "optimal")?;
    let held = records.iter().find(|r| r.kind == EventKind::Held);
    let placed = records.iter().find(|r| r.kind == EventKind::Placed);
    let final_type = match held {
        Some(h) => required(h.get_grasp("used"), h, "used")?,
        None => required(end.get_grasp("active"), end, "active")?,
    };
    let correct_type = final_type == optimal;
    let t0 = start.t_ms;
    let triggers = records.iter().filter(|r| r.kind == EventKind::GazeTrigger).count();
    let t_g_ms = if correct_type {
        records
            .iter()
            .rev()
            .find(|r| r.kind == EventKind::GazeTrigger && r.get_grasp("grasp") == Some(optimal))
            .map(|r| r.t_ms - t0)
    } else {
        None
    };
    let t_pt_ms = held.filter(|_| correct_type).map(|h| h.t_ms - t0);
    let t_ht_ms = placed.filter(|_| correct_type).map(|p| p.t_ms - t0);
    Ok(Some(TrialRow {
        index: start.get_u64("index").unwrap_or(0) as usize,
        block: required(start.get_u64("block"), start, "block")? as usize,
        object: required(start.get_u64("object"), start, "object")? as u32,
        name: start.get_str("name").unwrap_or_default().to_owned(),
        optimal,
        final_type,
        correct_type,
        held: held.is_some(),
        placed: placed.is_some(),
        result,
        triggers,
        t_g_ms,
        t_pt_ms,
        t_ht_ms,
    }))
}

fn breakdown(key: String, rows: &[&TrialRow], mode: Mode) -> Breakdown {
    let n = rows.len();
    let sr_g = Rate::of(rows.iter().filter(|r| r.correct_type).count(), n);
    let sr_task = Rate::of(rows.iter().filter(|r| r.task_success(mode)).count(), n);
    let t_g: Vec<f64> = rows.iter().filter_map(|r| r.t_g_ms).collect();
    let t_task: Vec<f64> = rows.iter().filter_map(|r| r.task_time(mode)).collect();
    Breakdown {
        key,
        sr_g,
        t_g: box_summary(&t_g),
        sr_task,
        t_task: box_summary(&t_task),
    }
}

fn group_by<K: Ord>(rows: &[TrialRow], key: impl Fn(&TrialRow) -> K) -> BTreeMap<K, Vec<&TrialRow>> {
    let mut out: BTreeMap<K, Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        out.entry(key(r)).or_default().push(r);
    }
    out
}

/// Mode recorded in the log header, if any.
pub fn log_mode(log: &SessionLog) -> Option<Mode> {
    let v = log.header.meta.get("protocol")?.get("mode")?;
    serde_json::from_value(v.clone()).ok()
}

/// Builds the report. `mode` overrides the mode stored in the header;
/// logs without either are read as transport sessions.
pub fn compute_metrics(log: &SessionLog, mode: Option<Mode>) -> Result<MetricsReport, Error> {
    log.validate()?;
    let mode = mode.or_else(|| log_mode(log)).unwrap_or(Mode::Transport);
    let mut rows = Vec::new();
    for trial in log.trials() {
        if let Some(row) = trial_row(trial)? {
            rows.push(row);
        }
    }
    let n = rows.len();
    let sr_g = Rate::of(rows.iter().filter(|r| r.correct_type).count(), n);
    let t_g = Times::of(rows.iter().filter_map(|r| r.t_g_ms).collect());
    let task = Rate::of(rows.iter().filter(|r| r.task_success(mode)).count(), n);
    let task_t = Times::of(rows.iter().filter_map(|r| r.task_time(mode)).collect());
    let (sr_ht, t_ht, sr_pt, t_pt) = match mode {
        Mode::Transport => (Some(task), Some(task_t), None, None),
        Mode::HoldOnly => (None, None, Some(task), Some(task_t)),
    };
    let per_block = group_by(&rows, |r| r.block)
        .into_iter()
        .map(|(b, rs)| breakdown(format!("block {}", b + 1), &rs, mode))
        .collect();
    let per_grasp = group_by(&rows, |r| r.optimal)
        .into_iter()
        .map(|(g, rs)| breakdown(g.to_string(), &rs, mode))
        .collect();
    let per_object = group_by(&rows, |r| r.object)
        .into_iter()
        .map(|(id, rs)| breakdown(format!("{id:>2} {}", rs[0].name), &rs, mode))
        .collect();
    Ok(MetricsReport {
        mode,
        n_trials: n,
        sr_g,
        t_g,
        sr_ht,
        t_ht,
        sr_pt,
        t_pt,
        per_block,
        per_grasp,
        per_object,
        trials: rows,
    })
}
