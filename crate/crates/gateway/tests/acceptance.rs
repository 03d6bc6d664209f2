//! Acceptance suite: one pass/fail line per primary criterion, each checked
//! at its stated tolerance and runtime budget. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use imyo_core::analysis::{compute_metrics, friedman, wilcoxon_signed_rank};
use imyo_core::gaze::{default_layout, ButtonId, GazePanel, GazeSample, PanelLayout, DEFAULT_DWELL_MS};
use imyo_core::hand::{GraspType, HandModel, HandState, Phase, MAX_JOINT_DEG};
use imyo_core::runner::{run_session, schedule_block, AgentConfig, ProtocolConfig, GAZE_PERIOD_MS};
use imyo_core::signals::{EmgFrame, MotionCommand, Myo, MyoConfig};
use imyo_core::wire::{decode, encode, Decoded, FrameDecoder, Message, SessionLog};
use imyo_core::world::Catalog;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

const GRASPS: [GraspType; 6] = [
    GraspType::Cylindrical,
    GraspType::Spherical,
    GraspType::Tripod,
    GraspType::Pinch,
    GraspType::Lateral,
    GraspType::Hook,
];

/// Random interleavings of switch requests and motion commands never change
/// the active type once the hand is beyond its pre-shape.
fn gate_safety() -> Verdict {
    let start = Instant::now();
    let model = HandModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0usize;
    let mut blocked = 0usize;
    for _ in 0..100_000 {
        let mut hand = HandState::new(GRASPS[rng.random_range(0..6)]);
        for _ in 0..40 {
            if rng.random_bool(0.4) {
                let before = hand;
                let (next, accepted) = model.request_grasp_type(&hand, rng.random_range(0..6)).unwrap();
                let locked = matches!(before.phase(), Phase::BeyondPreShape | Phase::FullyClosed);
                if locked {
                    blocked += 1;
                    if accepted || next.active != before.active {
                        violations += 1;
                    }
                }
                hand = next;
            } else {
                let speed = rng.random_range(0.0..=90.0);
                // Closing is favoured so that many requests meet a locked hand.
                let cmd = match rng.random_range(0..5) {
                    0..=2 => MotionCommand::Close(speed),
                    3 => MotionCommand::Open(speed),
                    _ => MotionCommand::Hold,
                };
                let before = hand.active;
                hand = model.step(&hand, cmd, rng.random_range(1.0..=200.0));
                if hand.active != before {
                    violations += 1;
                }
            }
        }
    }
    let took = start.elapsed();
    verdict(
        violations == 0 && blocked > 0 && took < Duration::from_secs(10),
        format!("1e5 interleavings, {blocked} locked requests, {violations} violations, {}", secs(took)),
    )
}

/// Half-open containment computed from the layout numbers directly.
fn oracle_hit(layout: &PanelLayout, s: &GazeSample) -> Option<ButtonId> {
    if !s.valid {
        return None;
    }
    layout
        .buttons
        .iter()
        .find(|b| {
            let (x0, x1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
            let (y0, y1) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
            x0 <= s.x && s.x < x1 && y0 <= s.y && s.y < y1
        })
        .map(|b| b.id)
}

/// Scans maximal same-button runs and fires once per run at the first sample
/// whose age in the run reaches the threshold.
fn dwell_oracle(layout: &PanelLayout, stream: &[GazeSample], threshold: f64) -> Vec<(f64, ButtonId)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < stream.len() {
        let hit = oracle_hit(layout, &stream[i]);
        let mut j = i;
        while j + 1 < stream.len() && oracle_hit(layout, &stream[j + 1]) == hit {
            j += 1;
        }
        if let Some(b) = hit {
            if let Some(k) = (i..=j).find(|&k| stream[k].t_ms - stream[i].t_ms >= threshold - 1e-6) {
                out.push((stream[k].t_ms, b));
            }
        }
        i = j + 1;
    }
    out
}

fn gaze_stream(rng: &mut ChaCha8Rng, layout: &PanelLayout) -> Vec<GazeSample> {
    let mut t = rng.random_range(0.0..50.0);
    let mut out = Vec::new();
    while out.len() < 400 {
        let dwell = rng.random_range(0.0..450.0);
        let end = t + dwell;
        let target = rng.random_range(0..12);
        while t < end {
            let s = match target {
                0..=8 => {
                    let b = &layout.buttons[target];
                    // Mostly inside, sometimes straying to the edges.
                    let jx = rng.random_range(-0.55..0.55) * b.w;
                    let jy = rng.random_range(-0.55..0.55) * b.h;
                    GazeSample::new(t, b.cx + jx, b.cy + jy)
                }
                9 => GazeSample::lost(t),
                _ => GazeSample::new(t, rng.random_range(-0.1..1.1), rng.random_range(-0.1..1.1)),
            };
            out.push(s);
            t += match rng.random_range(0..10) {
                0 => 0.0,
                1 => rng.random_range(30.0..120.0),
                _ => GAZE_PERIOD_MS + rng.random_range(-2.0..2.0),
            };
        }
    }
    out
}

fn dwell_equivalence() -> Verdict {
    let start = Instant::now();
    let layout = default_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut short, mut total) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let stream = gaze_stream(&mut rng, &layout);
        let mut panel = GazePanel::new(layout.clone(), DEFAULT_DWELL_MS).unwrap();
        let mut got = Vec::new();
        let mut run_start = None::<(Option<ButtonId>, f64)>;
        for s in &stream {
            let hit = oracle_hit(&layout, s);
            if run_start.is_none_or(|(b, _)| b != hit) {
                run_start = Some((hit, s.t_ms));
            }
            if let Some(ev) = panel.push(s).unwrap() {
                let (_, t0) = run_start.unwrap();
                if s.t_ms - t0 < DEFAULT_DWELL_MS - 1e-6 {
                    short += 1;
                }
                got.push((ev.t_ms, ev.button));
            }
        }
        let want = dwell_oracle(&layout, &stream, DEFAULT_DWELL_MS);
        total += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches == 0 && short == 0 && total > 0 && took < Duration::from_secs(5),
        format!(
            "1e3 streams, {total} oracle triggers, {mismatches} mismatched streams, {short} short-run triggers, {}",
            secs(took)
        ),
    )
}

fn speed_bound() -> Verdict {
    let model = HandModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut samples = 0usize;
    for _ in 0..3000 {
        let cfg = MyoConfig {
            threshold_flexor: rng.random_range(0.01..0.9),
            threshold_extensor: rng.random_range(0.01..0.9),
            gain_flexor: rng.random_range(0.1..20.0),
            gain_extensor: rng.random_range(0.1..20.0),
            tau_ms: rng.random_range(1.0..200.0),
            ..MyoConfig::default()
        };
        let mut myo = Myo::new(cfg).unwrap();
        let grasp = GRASPS[rng.random_range(0..6)];
        let mut hand = HandState::new(grasp);
        let mut t = 0.0;
        for _ in 0..300 {
            let dt = [10.0, 20.0, 1.0, rng.random_range(0.1..100.0)][rng.random_range(0..4)];
            t += dt;
            let raw = |r: &mut ChaCha8Rng| match r.random_range(0..4) {
                0 => 0.0,
                1 => r.random_range(-1e3..1e3),
                _ => r.random_range(-1.5..1.5),
            };
            let cmd = myo.push(&EmgFrame::new(t, raw(&mut rng), raw(&mut rng))).unwrap();
            worst = worst.max(cmd.speed());
            let before = model.angles(&hand);
            hand = model.step(&hand, cmd, dt);
            let after = model.angles(&hand);
            for i in 0..before.len() {
                let rate = (after[i] - before[i]).abs() / (dt / 1000.0);
                worst = worst.max(rate);
                samples += 1;
            }
        }
    }
    verdict(
        worst <= MAX_JOINT_DEG + 1e-9,
        format!("{samples} motor steps, max rate {worst:.12} deg/s"),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn latency() -> Verdict {
    let protocol = ProtocolConfig {
        seed: 42,
        ..ProtocolConfig::healthy()
    };
    let agent = AgentConfig::default();
    let log = run_session(&protocol, &agent).unwrap();
    let report = compute_metrics(&log, None).unwrap();
    let tg = median(report.trials.iter().filter_map(|r| r.t_g_ms).collect());
    let tht = median(report.trials.iter().filter_map(|r| r.t_ht_ms).collect());
    let tick = protocol.tick_ms;
    let profile = agent.reaction_latency_ms + DEFAULT_DWELL_MS;
    let task = profile + agent.reach_ms + agent.close_ms + agent.transport_ms;
    verdict(
        (tg - 500.0).abs() <= GAZE_PERIOD_MS && (tht - task).abs() <= 2.0 * tick && task == 5500.0,
        format!(
            "{} trials, median T-G {tg} ms (500 +/- {GAZE_PERIOD_MS:.1}), median T-HT {tht} ms (5500 +/- {})",
            report.n_trials,
            2.0 * tick
        ),
    )
}

fn block_composition() -> Verdict {
    let catalog = Catalog::builtin();
    let mut bad = Vec::new();
    for seed in 0..10_000u64 {
        let plan = schedule_block(&catalog, seed).unwrap();
        let types: Vec<GraspType> = plan.objects.iter().map(|id| catalog.get(*id).unwrap().optimal).collect();
        let hooks = types.iter().filter(|g| **g == GraspType::Hook).count();
        let adjacent = types.windows(2).any(|w| w[0] == w[1]);
        if types.len() != 24 || hooks != 4 || adjacent {
            bad.push(seed);
        }
    }
    verdict(bad.is_empty(), format!("1e4 seeds, {} bad schedules {:?}", bad.len(), &bad[..bad.len().min(5)]))
}

/// Average ranks of |d|, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    abs.iter()
        .map(|&v| {
            let below = abs.iter().filter(|&&w| w < v).count() as u64;
            let equal = abs.iter().filter(|&&w| w == v).count() as u64;
            2 * below + equal + 1
        })
        .collect()
}

/// Two-sided p by enumerating all 2^n sign assignments.
fn wilcoxon_enumerated(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    let r = doubled_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let total: u64 = r.iter().sum();
    let observed: u64 = d.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let dev = (2 * observed as i64 - total as i64).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        if (2 * w as i64 - total as i64).abs() >= dev {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

fn friedman_stat(rows: &[Vec<f64>]) -> f64 {
    let k = rows.len();
    let b = rows[0].len();
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for j in 0..b {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        for i in 0..k {
            let below = col.iter().filter(|&&w| w < col[i]).count() as f64;
            let equal = col.iter().filter(|&&w| w == col[i]).count() as f64;
            rank_sums[i] += below + (equal + 1.0) / 2.0;
        }
        let mut seen = Vec::new();
        for v in &col {
            if !seen.contains(v) {
                seen.push(*v);
                let t = col.iter().filter(|w| *w == v).count() as f64;
                tie_sum += t * t * t - t;
            }
        }
    }
    let (kf, bf) = (k as f64, b as f64);
    let num = 12.0 / (bf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * bf * (kf + 1.0);
    let den = 1.0 - tie_sum / (bf * (kf * kf * kf - kf));
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Shuffles treatments within each subject and counts statistics at least
/// as large as the observed one.
fn friedman_permutation(rows: &[Vec<f64>], shuffles: usize, rng: &mut ChaCha8Rng) -> f64 {
    let observed = friedman_stat(rows);
    let k = rows.len();
    let b = rows[0].len();
    let mut perm = rows.to_vec();
    let mut hits = 0usize;
    for _ in 0..shuffles {
        for j in 0..b {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.shuffle(rng);
            for i in 0..k {
                perm[i][j] = col[i];
            }
        }
        if friedman_stat(&perm) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / shuffles as f64
}

fn statistics() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut exact_bad = 0usize;
    let mut exact_cases = 0usize;
    for n in 5..=12 {
        for _ in 0..40 {
            // Rounded draws so that ties and zeros occur.
            let x: Vec<f64> = (0..n).map(|_| (rng.random_range(-3.0f64..4.0) * 2.0).round() / 2.0).collect();
            let zeros = vec![0.0; n];
            let nonzero = x.iter().filter(|v| **v != 0.0).count();
            if nonzero < 5 {
                continue;
            }
            exact_cases += 1;
            let p = wilcoxon_signed_rank(&x, &zeros).unwrap().p_value;
            if p != wilcoxon_enumerated(&x) {
                exact_bad += 1;
            }
        }
    }
    let mut approx_err = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.6)).collect();
        let r = wilcoxon_signed_rank(&x, &[0.0; 20]).unwrap();
        approx_err = approx_err.max((r.p_value - wilcoxon_enumerated(&x)).abs());
    }
    let mut friedman_err = 0.0f64;
    for &(k, b) in &[(3usize, 20usize), (4, 12), (8, 9)] {
        let shift: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.8)).collect();
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..b).map(|_| shift[i] + rng.random_range(0.0..1.0)).collect())
            .collect();
        let p = friedman(&rows).unwrap().p_value;
        let oracle = friedman_permutation(&rows, 100_000, &mut rng);
        friedman_err = friedman_err.max((p - oracle).abs());
    }
    let took = start.elapsed();
    verdict(
        exact_bad == 0 && approx_err <= 0.02 && friedman_err <= 0.02 && took < Duration::from_secs(60),
        format!(
            "exact {exact_cases} cases, {exact_bad} differ; n=20 approx max err {approx_err:.4}; \
             Friedman vs 1e5 shuffles max err {friedman_err:.4}; {}",
            secs(took)
        ),
    )
}

fn sample_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.random_range(0..3) {
        0 => Message::SetGraspType {
            index: rng.random_range(0..6),
        },
        1 => Message::Ack {
            accepted: rng.random_bool(0.5),
            index: rng.random_range(0..6),
        },
        _ => Message::HandStatus {
            phase: Phase::from_code(rng.random_range(0..4)).unwrap(),
            angles: std::array::from_fn(|_| rng.random_range(0..=9000)),
        },
    }
}

fn protocol_fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let crashed = catch_unwind(AssertUnwindSafe(|| {
        let mut dec = FrameDecoder::new();
        for _ in 0..1_000_000 {
            let len = rng.random_range(0..80);
            let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if len > 0 && rng.random_bool(0.3) {
                bytes[0] = 0xA5;
            }
            let _ = decode(&bytes);
            dec.push(&bytes);
            while dec.next_frame().is_some() {}
        }
    }))
    .is_err();

    let (mut flips, mut accepted_flips) = (0usize, 0usize);
    let (mut trips, mut trip_bad) = (0usize, 0usize);
    for _ in 0..100_000 {
        let msg = sample_message(&mut rng);
        let frame = encode(&msg).unwrap();
        trips += 1;
        let direct = matches!(decode(&frame), Ok(Decoded::Frame { msg: m, consumed }) if m == msg && consumed == frame.len());
        let mut dec = FrameDecoder::new();
        for chunk in frame.chunks(rng.random_range(1..=frame.len())) {
            dec.push(chunk);
        }
        if !direct || dec.messages() != vec![msg] {
            trip_bad += 1;
        }
        if trips <= 20_000 {
            for bit in 0..frame.len() * 8 {
                let mut bad = frame.clone();
                bad[bit / 8] ^= 1 << (bit % 8);
                flips += 1;
                let mut dec = FrameDecoder::new();
                dec.push(&bad);
                let streamed = dec.messages();
                if matches!(decode(&bad), Ok(Decoded::Frame { .. })) || !streamed.is_empty() {
                    accepted_flips += 1;
                }
            }
        }
    }
    verdict(
        !crashed && accepted_flips == 0 && trip_bad == 0,
        format!(
            "1e6 random streams {}; {flips} single-bit flips, {accepted_flips} accepted; {trips} round-trips, {trip_bad} failed",
            if crashed { "crashed" } else { "no crash" }
        ),
    )
}

fn run_sim(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_imyo"))
        .arg("sim")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism(dir: &Path) -> Verdict {
    let a = dir.join("a.jsonl");
    let b = dir.join("b.jsonl");
    let agent = dir.join("agent.json");
    std::fs::write(
        &agent,
        r#"{"wrong_button_prob": 0.2, "correct_wrong_button": false, "pinch_miss_prob": 0.3, "gaze_noise_sigma": 0.01}"#,
    )
    .unwrap();
    let agent = agent.to_str().unwrap();
    for p in [&a, &b] {
        if let Err(e) = run_sim(&["--seed", "42", "--agent", agent, "--out", p.to_str().unwrap()]) {
            return verdict(false, format!("sim failed: {e}"));
        }
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let identical = ta == tb;

    let mut logs = vec![SessionLog::from_jsonl(std::str::from_utf8(&ta).unwrap()).unwrap()];
    for seed in 0..12u64 {
        let protocol = ProtocolConfig {
            seed,
            blocks: 2,
            ..ProtocolConfig::default()
        };
        let agent = AgentConfig {
            seed,
            wrong_button_prob: 0.1 * (seed % 4) as f64,
            correct_wrong_button: seed % 2 == 0,
            pinch_miss_prob: 0.05 * (seed % 3) as f64,
            ..AgentConfig::default()
        };
        logs.push(run_session(&protocol, &agent).unwrap());
    }
    let mut violations = 0;
    let mut strict = 0;
    for log in &logs {
        let r = compute_metrics(log, None).unwrap();
        let task = r.task_rate();
        if task.successes > r.sr_g.successes {
            violations += 1;
        }
        if task.successes < r.sr_g.successes {
            strict += 1;
        }
    }
    verdict(
        identical && violations == 0,
        format!(
            "sim logs {} ({} bytes); SR-HT <= SR-G on {} logs ({strict} strictly), {violations} violations",
            if identical { "byte-identical" } else { "DIFFER" },
            ta.len(),
            logs.len()
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gate safety", Box::new(gate_safety)),
        ("dwell oracle equivalence", Box::new(dwell_equivalence)),
        ("speed bound", Box::new(speed_bound)),
        ("latency pipeline", Box::new(latency)),
        ("block composition", Box::new(block_composition)),
        ("statistics oracles", Box::new(statistics)),
        ("protocol fuzz", Box::new(protocol_fuzz)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| verdict(false, "panicked"));
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
