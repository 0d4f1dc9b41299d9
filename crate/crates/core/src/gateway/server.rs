//! Single-operator session server.
//!
//! The calling thread owns the simulation and runs the tick loop. A reader
//! thread decodes incoming lines and a writer thread sends outgoing ones;
//! both talk to the loop only through channels, so inputs reach the arbiter
//! in arrival order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::{check_hello, decode, encode, ProtocolError, StateMessage, WireMessage};
use super::trial_log::{TrialHeader, TrialLog, TRIAL_LOG_VERSION};
use crate::arbiter::{ArbiterConfig, ArbiterError, CoarsePolicy, OperatorInput, TrialPlan, TrialSession};
use crate::metrics::TrialMode;
use crate::sim_env::PegEnv;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("server i/o: {0}")]
    Io(#[from] io::Error),
    #[error("handshake failed: {0}")]
    Handshake(#[from] ProtocolError),
    #[error("client sent no hello within {0:?}")]
    HelloTimeout(Duration),
    #[error("client disconnected before hello")]
    ClosedBeforeHello,
    #[error(transparent)]
    Arbiter(#[from] ArbiterError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tick_hz: f64,
    pub port: u16,
    pub mode: TrialMode,
    pub seed: u64,
    /// The session ends after this many ticks even if the trial is unfinished.
    pub max_ticks: u64,
    pub hello_timeout_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { tick_hz: 30.0, port: 7878, mode: TrialMode::SemiAutonomous, seed: 0, max_ticks: 108_000, hello_timeout_ms: 10_000 }
    }
}

/// Checkpoint identity recorded in the trial log header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointInfo {
    pub path: Option<String>,
    pub fnv1a: Option<u64>,
}

#[derive(Debug)]
pub struct SessionReport {
    pub log: TrialLog,
    pub disconnected: bool,
}

enum Incoming {
    Message(WireMessage),
    Bad(ProtocolError),
    Closed,
}

fn spawn_reader(stream: TcpStream, tx: Sender<Incoming>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let msg = match decode(&line) {
                Ok(m) => Incoming::Message(m),
                Err(e) => Incoming::Bad(e),
            };
            if tx.send(msg).is_err() {
                return;
            }
        }
        let _ = tx.send(Incoming::Closed);
    })
}

fn spawn_writer(mut stream: TcpStream, rx: Receiver<String>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        while let Ok(mut line) = rx.recv() {
            line.push('\n');
            if stream.write_all(line.as_bytes()).and_then(|_| stream.flush()).is_err() {
                break;
            }
        }
    })
}

struct Link {
    stream: TcpStream,
    incoming: Receiver<Incoming>,
    outgoing: Option<Sender<String>>,
    reader: Option<thread::JoinHandle<()>>,
    writer: Option<thread::JoinHandle<()>>,
}

impl Link {
    fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let (in_tx, in_rx) = mpsc::channel();
        let (out_tx, out_rx) = mpsc::channel();
        let reader = spawn_reader(stream.try_clone()?, in_tx);
        let writer = spawn_writer(stream.try_clone()?, out_rx);
        Ok(Self { stream, incoming: in_rx, outgoing: Some(out_tx), reader: Some(reader), writer: Some(writer) })
    }

    fn send(&self, msg: &WireMessage) {
        if let Some(tx) = &self.outgoing {
            let _ = tx.send(encode(msg));
        }
    }

    fn close(mut self) {
        // Let the writer flush everything queued before tearing the socket down.
        drop(self.outgoing.take());
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

fn handshake(link: &Link, timeout: Duration) -> Result<(), ServerError> {
    let msg = match link.incoming.recv_timeout(timeout) {
        Ok(Incoming::Message(m)) => m,
        Ok(Incoming::Bad(e)) => return Err(e.into()),
        Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => return Err(ServerError::ClosedBeforeHello),
        Err(RecvTimeoutError::Timeout) => return Err(ServerError::HelloTimeout(timeout)),
    };
    check_hello(&msg)?;
    Ok(())
}

/// Accepts one connection on `listener` and runs a trial session over it.
#[allow(clippy::too_many_arguments)]
pub fn serve_on(
    listener: &TcpListener,
    env: PegEnv,
    plan: TrialPlan,
    arbiter: ArbiterConfig,
    config: &SessionConfig,
    agent: &mut dyn CoarsePolicy,
    checkpoint: CheckpointInfo,
) -> Result<SessionReport, ServerError> {
    let (stream, peer) = listener.accept()?;
    log::info!("operator connected from {peer}");
    let link = Link::new(stream)?;
    if let Err(e) = handshake(&link, Duration::from_millis(config.hello_timeout_ms)) {
        link.send(&WireMessage::Error { message: e.to_string() });
        link.close();
        return Err(e);
    }
    link.send(&WireMessage::hello());

    let mut seed = config.seed;
    let new_session = |seed| TrialSession::new(env.clone(), plan.clone(), arbiter, config.mode, seed, config.tick_hz);
    let mut session = new_session(seed)?;
    link.send(&WireMessage::State(StateMessage::from_arbiter(session.arbiter())));

    let period = Duration::from_secs_f64(1.0 / config.tick_hz);
    let start = Instant::now();
    let mut disconnected = false;
    let mut ticks_run: u64 = 0;
    'ticks: while !session.is_complete() && session.arbiter().tick_count() < config.max_ticks {
        ticks_run += 1;
        let deadline = start + period.mul_f64(ticks_run as f64);
        if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        loop {
            match link.incoming.try_recv() {
                Ok(Incoming::Message(WireMessage::Input(input))) => session.submit(input),
                Ok(Incoming::Message(WireMessage::Resume { seq })) => {
                    session.submit(OperatorInput { seq, ..OperatorInput::resume() })
                }
                Ok(Incoming::Message(WireMessage::Reset { seed: s })) => {
                    seed = s.unwrap_or(seed);
                    log::info!("trial reset by operator (seed {seed})");
                    session = new_session(seed)?;
                }
                Ok(Incoming::Message(other)) => link.send(&WireMessage::Error {
                    message: format!("unexpected {} message from client", other.type_name()),
                }),
                Ok(Incoming::Bad(e)) => {
                    log::warn!("bad client record: {e}");
                    link.send(&WireMessage::Error { message: e.to_string() });
                }
                Ok(Incoming::Closed) | Err(TryRecvError::Disconnected) => {
                    disconnected = true;
                    break 'ticks;
                }
                Err(TryRecvError::Empty) => break,
            }
        }
        let events = session.tick(agent);
        let tick = session.arbiter().tick_count();
        for event in events {
            link.send(&WireMessage::Event { tick, event });
        }
        link.send(&WireMessage::State(StateMessage::from_arbiter(session.arbiter())));
    }
    if disconnected {
        log::warn!("operator disconnected at tick {}; trial marked incomplete", session.arbiter().tick_count());
    }
    link.close();

    let header = TrialHeader {
        version: TRIAL_LOG_VERSION,
        mode: config.mode,
        seed,
        tick_hz: config.tick_hz,
        env: env.config().clone(),
        plan,
        arbiter,
        checkpoint: checkpoint.path,
        checkpoint_fnv1a: checkpoint.fnv1a,
    };
    Ok(SessionReport { log: TrialLog::from_outcome(header, &session.finish()), disconnected })
}
