use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use pegsim::arbiter::{ArbiterConfig, ArbiterEvent, CoarsePolicy, ControlPhase, IdlePolicy, OperatorInput, TrialPlan};
use pegsim::gateway::{
    decode, encode, serve_on, verify_replay, CheckpointInfo, ServerError, SessionConfig, SessionReport, StateMessage, WireMessage,
    PROTOCOL_VERSION,
};
use pegsim::metrics::TrialMode;
use pegsim::sim_env::{Action, EnvConfig, Layout, PegEnv, SceneState};
use proptest::prelude::*;

/// Keeps stepping in +x so coarse motion is visible.
struct Drift;

impl CoarsePolicy for Drift {
    fn begin(&mut self, _scene: &SceneState) {}

    fn act(&mut self, _scene: &SceneState) -> Option<Action> {
        Some(Action::from_levels(1, 0, 0).unwrap())
    }
}

fn start_server(config: SessionConfig) -> (std::net::SocketAddr, thread::JoinHandle<Result<SessionReport, ServerError>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let env = PegEnv::new(EnvConfig::default()).unwrap();
        serve_on(&listener, env, TrialPlan::default(), ArbiterConfig::default(), &config, &mut Drift, CheckpointInfo::default())
    });
    (addr, handle)
}

struct Client {
    out: TcpStream,
    lines: std::io::Lines<BufReader<TcpStream>>,
}

impl Client {
    fn connect(addr: std::net::SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self { out: stream.try_clone().unwrap(), lines: BufReader::new(stream).lines() }
    }

    fn send(&mut self, msg: &WireMessage) {
        writeln!(self.out, "{}", encode(msg)).unwrap();
    }

    fn recv(&mut self) -> Option<WireMessage> {
        let line = self.lines.next()?.ok()?;
        Some(decode(&line).expect("server sent a malformed record"))
    }

    fn next_state(&mut self) -> StateMessage {
        loop {
            if let WireMessage::State(s) = self.recv().expect("connection closed") {
                return s;
            }
        }
    }
}

fn config(mode: TrialMode) -> SessionConfig {
    SessionConfig { mode, seed: 4, tick_hz: 30.0, ..SessionConfig::default() }
}

fn input_message(dx: f64, seq: u64) -> WireMessage {
    WireMessage::Input(OperatorInput { seq, ..OperatorInput::motion(dx, 0.0, 0.0, 0.0, false) })
}

#[test]
fn override_is_reported_and_ticks_advance() {
    let (addr, server) = start_server(config(TrialMode::SemiAutonomous));
    let mut c = Client::connect(addr);
    c.send(&WireMessage::hello());
    assert_eq!(c.recv(), Some(WireMessage::hello()));
    let first = c.next_state();
    assert_eq!(first.phase, ControlPhase::AutoCoarse);
    let mut last_tick = first.tick;
    for _ in 0..5 {
        let s = c.next_state();
        assert_eq!(s.tick, last_tick + 1);
        last_tick = s.tick;
    }
    c.send(&input_message(1.0, 1));
    let mut saw_override = false;
    let state = loop {
        match c.recv().unwrap() {
            WireMessage::Event { event: ArbiterEvent::Override, .. } => saw_override = true,
            WireMessage::State(s) if s.last_input_seq == 1 => break s,
            WireMessage::State(s) => {
                assert!(s.tick > last_tick);
                last_tick = s.tick;
            }
            _ => {}
        }
    };
    assert!(saw_override);
    assert_eq!(state.phase, ControlPhase::ManualPrecision);
    drop(c);
    let report = server.join().unwrap().unwrap();
    assert!(report.disconnected);
    assert!(!report.log.summary.complete);
    // The server's log re-simulates to the same metrics.
    verify_replay(&report.log, &mut Drift).unwrap();
}

#[test]
fn inputs_are_applied_in_arrival_order() {
    let (addr, server) = start_server(config(TrialMode::Manual));
    let mut c = Client::connect(addr);
    c.send(&WireMessage::hello());
    c.recv();
    c.next_state();
    let n = 40u64;
    for seq in 1..=n {
        c.send(&input_message(0.25, seq));
    }
    let mut seen = 0;
    while seen < n {
        let s = c.next_state();
        assert!(s.last_input_seq >= seen, "sequence went backwards");
        seen = s.last_input_seq;
    }
    drop(c);
    let report = server.join().unwrap().unwrap();
    let seqs: Vec<u64> = report.log.inputs.iter().map(|(_, i)| i.seq).collect();
    assert_eq!(seqs, (1..=n).collect::<Vec<_>>());
    let ticks: Vec<u64> = report.log.inputs.iter().map(|(t, _)| *t).collect();
    assert!(ticks.windows(2).all(|w| w[0] <= w[1]));
    verify_replay(&report.log, &mut IdlePolicy).unwrap();
}

#[test]
fn version_mismatch_is_refused() {
    let (addr, server) = start_server(config(TrialMode::Manual));
    let mut c = Client::connect(addr);
    c.send(&WireMessage::Hello { protocol_version: PROTOCOL_VERSION + 1 });
    match c.recv() {
        Some(WireMessage::Error { message }) => assert!(message.contains("version"), "{message}"),
        other => panic!("expected an error, got {other:?}"),
    }
    assert!(c.recv().is_none(), "server should close the connection");
    assert!(matches!(server.join().unwrap(), Err(ServerError::Handshake(_))));
}

#[test]
fn state_broadcast_keeps_the_tick_rate() {
    let (addr, server) = start_server(config(TrialMode::Manual));
    let mut c = Client::connect(addr);
    c.send(&WireMessage::hello());
    c.recv();
    c.next_state();
    let window = Duration::from_secs(3);
    let start = Instant::now();
    let mut states = 0;
    while start.elapsed() < window {
        c.next_state();
        states += 1;
    }
    let rate = states as f64 / start.elapsed().as_secs_f64();
    assert!((rate - 30.0).abs() <= 3.0, "state rate {rate:.2} Hz");
    drop(c);
    server.join().unwrap().unwrap();
}

#[test]
fn bad_records_get_an_error_and_the_session_continues() {
    let (addr, server) = start_server(config(TrialMode::Manual));
    let mut c = Client::connect(addr);
    c.send(&WireMessage::hello());
    c.recv();
    writeln!(c.out, "{{\"type\":\"input\",\"dx\":").unwrap();
    loop {
        if let Some(WireMessage::Error { message }) = c.recv() {
            assert!(message.contains("column"), "{message}");
            break;
        }
    }
    c.next_state();
    drop(c);
    server.join().unwrap().unwrap();
}

#[test]
fn state_message_mirrors_a_reset_scene() {
    let env = PegEnv::new(EnvConfig::default()).unwrap();
    let scene = env.reset(12, Layout::EvalB).unwrap();
    let msg = StateMessage::from_scene(&scene, 0, 0, 9, 0);
    assert_eq!(msg.tick, scene.tick);
    assert_eq!(msg.gripper, scene.gripper);
    assert_eq!(msg.jaws_closed, scene.jaws_closed);
    assert_eq!(msg.pegs, scene.pegs);
    assert_eq!(msg.target_index, scene.target_index);
    assert_eq!(msg.held_peg, scene.held_peg);
    assert_eq!(msg.phase, scene.phase);
    let back = match decode(&encode(&WireMessage::State(msg.clone()))).unwrap() {
        WireMessage::State(s) => s,
        other => panic!("{other:?}"),
    };
    assert_eq!(back, msg);
}

fn finite() -> impl Strategy<Value = f64> {
    -1e6f64..1e6
}

fn message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        any::<u32>().prop_map(|v| WireMessage::Hello { protocol_version: v }),
        (finite(), finite(), finite(), finite(), any::<bool>(), any::<bool>(), 0.0f64..1e9, any::<u64>()).prop_map(
            |(dx, dy, dz, droll, clutch, resume, timestamp_ms, seq)| {
                WireMessage::Input(OperatorInput { dx, dy, dz, droll, clutch, resume, timestamp_ms, seq })
            }
        ),
        prop::option::of(any::<u64>()).prop_map(|seed| WireMessage::Reset { seed }),
        any::<u64>().prop_map(|seq| WireMessage::Resume { seq }),
        ".*".prop_map(|message| WireMessage::Error { message }),
        (any::<u64>(), any::<bool>()).prop_map(|(tick, timeout)| WireMessage::Event { tick, event: ArbiterEvent::Handover { timeout } }),
        (any::<u64>(), any::<u64>(), 0usize..9).prop_map(|(seed, seq, leg)| {
            let env = PegEnv::new(EnvConfig::default()).unwrap();
            let scene = env.reset(seed, Layout::RandomUniform).unwrap();
            WireMessage::State(StateMessage::from_scene(&scene, seed % 1000, leg, 9, seq))
        }),
    ]
}

proptest! {
    #[test]
    fn every_message_is_one_line_and_roundtrips(msg in message()) {
        let line = encode(&msg);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode(&line).unwrap(), msg);
    }

    #[test]
    fn unknown_fields_are_ignored(seq in any::<u64>(), extra in "[a-z]{3,8}") {
        let line = format!("{{\"type\":\"resume\",\"seq\":{seq},\"x_{extra}\":[1,2,{{}}]}}");
        prop_assert_eq!(decode(&line).unwrap(), WireMessage::Resume { seq });
    }
}
