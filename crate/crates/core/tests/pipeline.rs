use imyo_core::analysis::compute_metrics;
use imyo_core::hand::Phase;
use imyo_core::runner::{
    check_flow_order, run_session, run_with, AgentConfig, Mode, ProtocolConfig, RecordedInputs, Recorder,
    ScriptedAgent, Session, SessionSetup,
};
use imyo_core::wire::{encode, EventKind, FrameDecoder, Message, SessionLog};
use imyo_core::GraspType;

fn one_block(mode: Mode, seed: u64) -> ProtocolConfig {
    ProtocolConfig {
        blocks: 1,
        mode,
        seed,
        ..ProtocolConfig::default()
    }
}

#[test]
fn clean_subject_selects_every_grasp_correctly() {
    let log = run_session(&one_block(Mode::Transport, 5), &AgentConfig::default()).unwrap();
    let report = compute_metrics(&log, None).unwrap();
    assert_eq!(report.n_trials, 24);
    assert_eq!(report.sr_g.successes, 24);
    assert_eq!(report.task_rate().successes, 24);
    assert_eq!(report.task_times().median(), Some(5500.0));
    check_flow_order(&log, 0.5).unwrap();
}

#[test]
fn log_survives_jsonl_round_trip() {
    let agent = AgentConfig {
        wrong_button_prob: 0.3,
        pinch_miss_prob: 0.2,
        ..AgentConfig::default()
    };
    let log = run_session(&one_block(Mode::Transport, 11), &agent).unwrap();
    let text = log.to_jsonl();
    let parsed = SessionLog::from_jsonl(&text).unwrap();
    assert_eq!(parsed.to_jsonl(), text);
    assert_eq!(compute_metrics(&parsed, None).unwrap(), compute_metrics(&log, None).unwrap());
}

#[test]
fn recorded_inputs_reproduce_the_session() {
    let protocol = one_block(Mode::HoldOnly, 3);
    let agent = AgentConfig {
        gaze_noise_sigma: 0.02,
        ..AgentConfig::default()
    };
    let mut live = Session::new(protocol.clone(), SessionSetup::default()).unwrap();
    let mut subject = ScriptedAgent::new(agent, live.layout().clone(), protocol.workspace);
    let mut recorder = Recorder::new(&mut subject);
    run_with(&mut live, &mut recorder);
    let inputs = recorder.inputs;

    let mut again = Session::new(protocol, SessionSetup::default()).unwrap();
    let mut source = RecordedInputs::new(inputs);
    assert_eq!(run_with(&mut again, &mut source), 0);
    assert!(source.exhausted());
    assert_eq!(again.log().to_jsonl(), live.log().to_jsonl());
    let ends = live.log().records.iter().filter(|r| r.kind == EventKind::TrialEnd).count();
    assert_eq!(ends, 24);
}

#[test]
fn stream_decoder_recovers_frames_between_noise() {
    let msgs = [
        Message::set_grasp(GraspType::Pinch),
        Message::hand_status(Phase::FullOpen, &[0.0; 6]),
        Message::set_grasp(GraspType::Lateral),
    ];
    let mut stream = vec![0x00, 0xA5, 0x13];
    for m in &msgs {
        stream.extend(encode(m).unwrap());
        stream.extend([0xFF, 0x42]);
    }
    let mut dec = FrameDecoder::new();
    for chunk in stream.chunks(3) {
        dec.push(chunk);
    }
    assert_eq!(dec.messages(), msgs);
    assert_eq!(dec.buffered(), 0);
}
