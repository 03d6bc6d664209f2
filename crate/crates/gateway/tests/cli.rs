use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use imyo_core::wire::{EventKind, SessionLog};

fn imyo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imyo")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const NOISY_AGENT: &str = r#"{"wrong_button_prob": 0.3, "gaze_noise_sigma": 0.02, "pinch_miss_prob": 0.2}"#;

#[test]
fn sim_with_seed_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.jsonl"), path(dir.path(), "b.jsonl"));
    for p in [&a, &b] {
        let out = imyo(&["sim", "--seed", "42", "--blocks", "2", "--out", s(p)]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("SR-G"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let other = path(dir.path(), "c.jsonl");
    assert!(imyo(&["sim", "--seed", "43", "--blocks", "2", "--out", s(&other)]).status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn eight_blocks_yield_192_trial_ends() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "log.jsonl");
    let out = imyo(&["sim", "--blocks", "8", "--seed", "42", "--out", s(&out_path)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let log = SessionLog::from_jsonl(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let ends = log.records.iter().filter(|r| r.kind == EventKind::TrialEnd).count();
    assert_eq!(ends, 192);
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "log.jsonl");
    let bad_json = path(dir.path(), "bad.json");
    std::fs::write(&bad_json, "{ not json").unwrap();
    let bad_agent = path(dir.path(), "agent.json");
    std::fs::write(&bad_agent, r#"{"wrong_button_prob": 2.0}"#).unwrap();
    let zero_blocks = path(dir.path(), "zero.json");
    std::fs::write(&zero_blocks, r#"{"blocks": 0}"#).unwrap();

    let cases: Vec<Vec<&str>> = vec![
        vec!["sim", "--protocol", "/nonexistent/p.json", "--out", s(&out_path)],
        vec!["sim", "--protocol", s(&bad_json), "--out", s(&out_path)],
        vec!["sim", "--agent", s(&bad_agent), "--out", s(&out_path)],
        vec!["sim", "--protocol", s(&zero_blocks), "--out", s(&out_path)],
        vec!["sim", "--mode", "sideways", "--out", s(&out_path)],
    ];
    for args in cases {
        let out = imyo(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", text(&out.stderr));
        assert!(!text(&out.stderr).is_empty());
        assert!(out.stdout.is_empty(), "{args:?}");
        assert!(!out_path.exists(), "{args:?} left output behind");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
    assert_eq!(imyo(&[]).status.code(), Some(2));
}

#[test]
fn sim_trace_replays_to_identical_log() {
    let dir = tempfile::tempdir().unwrap();
    let agent = path(dir.path(), "agent.json");
    std::fs::write(&agent, NOISY_AGENT).unwrap();
    let (log, inputs, again) = (
        path(dir.path(), "log.jsonl"),
        path(dir.path(), "inputs.jsonl"),
        path(dir.path(), "replayed.jsonl"),
    );
    let out = imyo(&[
        "sim", "--blocks", "1", "--seed", "9", "--agent", s(&agent), "--out", s(&log), "--inputs-out", s(&inputs),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let out = imyo(&["replay", s(&inputs), "--out", s(&again)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().next(), text(&imyo(&["stats", s(&log)]).stdout).lines().next());
    assert_eq!(std::fs::read(&log).unwrap(), std::fs::read(&again).unwrap());

    let garbage = path(dir.path(), "garbage.jsonl");
    std::fs::write(&garbage, "{\"type\":\"gaze\"}\n").unwrap();
    let out = imyo(&["replay", s(&garbage)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 1"));
}

#[test]
fn metrics_json_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let m = path(dir.path(), "m.json");
    let out = imyo(&["sim", "--blocks", "1", "--mode", "hold", "--metrics-json", s(&m)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
    assert_eq!(v["mode"], "HoldOnly");
    assert_eq!(v["SR_PT"]["n"], 24);
    assert!(v.get("SR_HT").is_none());
}

fn noisy_logs(dir: &Path, seeds: &[u64], blocks: &str) -> Vec<PathBuf> {
    let agent = path(dir, "noisy.json");
    std::fs::write(&agent, NOISY_AGENT).unwrap();
    seeds
        .iter()
        .map(|seed| {
            let p = path(dir, &format!("log-{seed}-{blocks}.jsonl"));
            let seed = seed.to_string();
            let out = imyo(&["sim", "--blocks", blocks, "--seed", &seed, "--agent", s(&agent), "--out", s(&p)]);
            assert!(out.status.success(), "{}", text(&out.stderr));
            p
        })
        .collect()
}

#[test]
fn stats_on_one_two_and_three_logs() {
    let dir = tempfile::tempdir().unwrap();
    let logs = noisy_logs(dir.path(), &[1, 2, 3], "1");

    let one = imyo(&["stats", s(&logs[0])]);
    assert!(one.status.success());
    let t = text(&one.stdout);
    assert!(t.contains("SR-G") && t.contains("T-HT") && t.contains("KS normality"), "{t}");

    let csv = text(&imyo(&["stats", s(&logs[0]), "--csv"]).stdout);
    assert_eq!(csv.lines().count(), 25);

    let same = imyo(&["stats", s(&logs[0]), s(&logs[0])]);
    assert!(same.status.success());
    assert!(text(&same.stdout).contains("Wilcoxon signed-rank: degenerate, all paired differences are zero"));

    let two = imyo(&["stats", s(&logs[0]), s(&logs[1]), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&two.stdout).unwrap();
    let p = v["wilcoxon"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let three = imyo(&["stats", s(&logs[0]), s(&logs[1]), s(&logs[2])]);
    assert!(three.status.success(), "{}", text(&three.stderr));
    let t = text(&three.stdout);
    assert!(t.contains("Friedman: statistic"), "{t}");
    assert_eq!(t.matches("Bonferroni p =").count(), 3);

    let three = imyo(&["stats", s(&logs[0]), s(&logs[1]), s(&logs[2]), "--json", "--metric", "switch"]);
    let v: serde_json::Value = serde_json::from_slice(&three.stdout).unwrap();
    assert!(v["friedman"]["p_value"].as_f64().is_some());
    assert_eq!(v["pairwise"].as_array().unwrap().len(), 3);
}

#[test]
fn stats_rejects_mismatched_trial_counts() {
    let dir = tempfile::tempdir().unwrap();
    let short = noisy_logs(dir.path(), &[1], "1");
    let long = noisy_logs(dir.path(), &[1], "2");
    let out = imyo(&["stats", s(&short[0]), s(&long[0])]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("trial counts differ"));
    let missing = imyo(&["stats", "/nonexistent.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn serve_takes_port_from_environment() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_imyo"))
        .arg("serve")
        .env("IMYO_PORT", "0")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line
        .split("http://")
        .nth(1)
        .and_then(|r| r.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_owned();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.ends_with("ok"));
}
