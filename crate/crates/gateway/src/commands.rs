//! Offline subcommands: headless simulation, statistics over session logs and
//! trace replay. Each returns the text to print or a [`Failure`] carrying
//! the process exit code.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use imyo_core::analysis::{
    bonferroni, compute_metrics, friedman, ks_normality, wilcoxon_signed_rank, MetricsReport, TestResult,
};
use imyo_core::runner::{
    run_with, AgentConfig, Input, Mode, ProtocolConfig, Recorder, ScriptedAgent, Session, SessionSetup,
};
use imyo_core::wire::SessionLog;
use serde_json::{json, Value};

use crate::envelope::{parse_trace, write_trace, Inbound};
use crate::live::replay;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    /// Bad arguments, configs or inputs.
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CmdResult = Result<String, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory so a failed run
/// never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::internal(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SimArgs {
    pub protocol: Option<PathBuf>,
    pub agent: Option<PathBuf>,
    pub seed: Option<u64>,
    pub blocks: Option<usize>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub inputs_out: Option<PathBuf>,
}

/// Runs one session with the scripted subject. Also returns the recorded
/// input trace, ending with an `end` past the last tick so that replaying it
/// runs the session to completion.
pub fn simulate(args: &SimArgs) -> Result<(SessionLog, Vec<Inbound>), Failure> {
    let mut protocol = match &args.protocol {
        Some(p) => ProtocolConfig::from_json(&read(p)?).map_err(|e| Failure::usage(e.to_string()))?,
        None => ProtocolConfig::default(),
    };
    let mut agent = match &args.agent {
        Some(p) => AgentConfig::from_json(&read(p)?).map_err(|e| Failure::usage(e.to_string()))?,
        None => AgentConfig::default(),
    };
    if let Some(s) = args.seed {
        protocol.seed = s;
        agent.seed = s;
    }
    if let Some(b) = args.blocks {
        protocol.blocks = b;
    }
    if let Some(m) = args.mode {
        protocol.mode = m;
    }
    agent.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let mut session = Session::new(protocol.clone(), SessionSetup::default()).map_err(|e| Failure::usage(e.to_string()))?;
    let mut meta = serde_json::Map::new();
    meta.insert("agent".into(), json!(agent));
    for (k, v) in &meta {
        session.annotate(k, v.clone());
    }
    let mut subject = ScriptedAgent::new(agent, session.layout().clone(), protocol.workspace);
    let mut recorder = Recorder::new(&mut subject);
    run_with(&mut session, &mut recorder);
    let mut trace = vec![Inbound::start_with(&protocol, meta)];
    trace.extend(recorder.inputs.iter().map(Inbound::from_input));
    trace.push(Inbound::from_input(&Input::End {
        t_ms: session.next_tick_ms(),
    }));
    Ok((session.into_log(), trace))
}

pub fn sim(args: &SimArgs) -> CmdResult {
    let (log, trace) = simulate(args)?;
    let report = compute_metrics(&log, None).map_err(|e| Failure::internal(e.to_string()))?;
    if let Some(p) = &args.out {
        write_atomic(p, &log.to_jsonl())?;
    }
    if let Some(p) = &args.inputs_out {
        write_atomic(p, &write_trace(&trace))?;
    }
    if let Some(p) = &args.metrics_json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::internal(e.to_string()))?;
        write_atomic(p, &(text + "\n"))?;
    }
    Ok(report.to_text())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// T-HT or T-PT, whichever the session mode defines.
    Task,
    /// T-G.
    Switch,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "task" => Ok(Metric::Task),
            "switch" => Ok(Metric::Switch),
            _ => Err(format!("unknown metric {s:?}, expected task or switch")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatsArgs {
    pub logs: Vec<PathBuf>,
    pub metric: Metric,
    pub mode: Option<Mode>,
    pub json: bool,
    pub csv: bool,
}

fn per_trial(report: &MetricsReport, metric: Metric) -> Vec<Option<f64>> {
    report
        .trials
        .iter()
        .map(|r| match metric {
            Metric::Task => r.task_time(report.mode),
            Metric::Switch => r.t_g_ms,
        })
        .collect()
}

/// Columns where every log has a value.
fn complete_columns(series: &[Vec<Option<f64>>]) -> Vec<Vec<f64>> {
    let n = series[0].len();
    let keep: Vec<usize> = (0..n).filter(|&i| series.iter().all(|s| s[i].is_some())).collect();
    series
        .iter()
        .map(|s| keep.iter().map(|&i| s[i].expect("kept")).collect())
        .collect()
}

fn test_json(r: &Result<TestResult, String>) -> Value {
    match r {
        Ok(t) => json!(t),
        Err(m) => json!({ "degenerate": m }),
    }
}

fn test_line(label: &str, r: &Result<TestResult, String>) -> String {
    match r {
        Ok(t) => format!("{label}: statistic {:.4}, p = {:.6} ({}, n = {})", t.statistic, t.p_value, t.method, t.n),
        Err(m) => format!("{label}: degenerate, {m}"),
    }
}

fn paired(a: &[f64], b: &[f64]) -> Result<TestResult, String> {
    if a.iter().zip(b).all(|(x, y)| x == y) {
        return Err("all paired differences are zero".into());
    }
    wilcoxon_signed_rank(a, b).map_err(|e| e.to_string())
}

pub fn stats(args: &StatsArgs) -> CmdResult {
    if args.logs.is_empty() {
        return Err(Failure::usage("stats needs at least one log"));
    }
    let mut reports = Vec::new();
    for p in &args.logs {
        let log = SessionLog::from_jsonl(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        let r = compute_metrics(&log, args.mode).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    if reports.len() == 1 {
        let r = &reports[0];
        if args.csv {
            return Ok(r.to_csv());
        }
        let sample: Vec<f64> = per_trial(r, args.metric).into_iter().flatten().collect();
        let ks = ks_normality(&sample).map_err(|e| e.to_string());
        if args.json {
            let v = json!({ "metrics": r, "normality": test_json(&ks) });
            return Ok(serde_json::to_string_pretty(&v).expect("json"));
        }
        return Ok(format!("{}\n{}", r.to_text(), test_line("KS normality", &ks)));
    }

    let counts: Vec<usize> = reports.iter().map(|r| r.trials.len()).collect();
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Failure::usage(format!("trial counts differ between logs: {counts:?}")));
    }
    let series: Vec<Vec<Option<f64>>> = reports.iter().map(|r| per_trial(r, args.metric)).collect();
    let cols = complete_columns(&series);
    let mut text = String::new();
    for (p, r) in args.logs.iter().zip(&reports) {
        let rate = r.task_rate();
        let med = r.task_times().median();
        let _ = writeln!(
            text,
            "{}: {} trials, task success {}/{}, median task time {}",
            p.display(),
            r.n_trials,
            rate.successes,
            rate.n,
            med.map_or("-".into(), |m| format!("{m:.1} ms"))
        );
    }
    let _ = writeln!(text, "paired trials with values in every log: {}", cols[0].len());

    if reports.len() == 2 {
        let w = paired(&cols[0], &cols[1]);
        if args.json {
            return Ok(serde_json::to_string_pretty(&json!({ "n_pairs": cols[0].len(), "wilcoxon": test_json(&w) })).expect("json"));
        }
        text.push_str(&test_line("Wilcoxon signed-rank", &w));
        return Ok(text);
    }

    let f = friedman(&cols).map_err(|e| e.to_string());
    let k = cols.len();
    let m = k * (k - 1) / 2;
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pairs.push((i, j, paired(&cols[i], &cols[j])));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|(_, _, r)| r.as_ref().map_or(1.0, |t| t.p_value)).collect();
    let adjusted = bonferroni(&raw, m);
    if args.json {
        let pj: Vec<Value> = pairs
            .iter()
            .zip(&adjusted)
            .map(|((i, j, r), adj)| json!({ "a": i, "b": j, "test": test_json(r), "p_bonferroni": adj }))
            .collect();
        let v = json!({ "n_blocks": cols[0].len(), "friedman": test_json(&f), "pairwise": pj });
        return Ok(serde_json::to_string_pretty(&v).expect("json"));
    }
    text.push_str(&test_line("Friedman", &f));
    text.push('\n');
    for ((i, j, r), adj) in pairs.iter().zip(&adjusted) {
        let _ = writeln!(text, "{} (Bonferroni p = {adj:.6})", test_line(&format!("log {} vs log {}", i + 1, j + 1), r));
    }
    Ok(text.trim_end().to_owned())
}

#[derive(Debug, Clone)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    pub protocol: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn replay_cmd(args: &ReplayArgs) -> CmdResult {
    let trace = parse_trace(&read(&args.trace)?).map_err(|e| Failure::usage(format!("{}: {e}", args.trace.display())))?;
    let fallback = match &args.protocol {
        Some(p) => Some(ProtocolConfig::from_json(&read(p)?).map_err(|e| Failure::usage(e.to_string()))?),
        None => None,
    };
    let log = replay(&trace, fallback).map_err(|e| Failure::usage(e.to_string()))?;
    if let Some(p) = &args.out {
        write_atomic(p, &log.to_jsonl())?;
    }
    let report = compute_metrics(&log, None).map_err(|e| Failure::internal(e.to_string()))?;
    Ok(report.to_text())
}
