//! Line-delimited JSON wire protocol. Every message is one JSON object on one
//! line with a `type` tag; unknown fields are ignored on read.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{Arbiter, ArbiterEvent, ControlPhase, OperatorInput};
use crate::sim_env::{Peg, Pose, SceneState};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed record at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("record contains an embedded newline")]
    Multiline,
    #[error("protocol version mismatch: client {client}, server {server}")]
    Version { client: u32, server: u32 },
    #[error("expected hello, got {0}")]
    ExpectedHello(String),
}

/// Geometric snapshot sent to the UI every tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub gripper: Pose,
    pub jaws_closed: bool,
    pub pegs: Vec<Peg>,
    pub target_index: usize,
    pub held_peg: Option<usize>,
    pub phase: ControlPhase,
    pub leg_index: usize,
    pub legs_total: usize,
    /// Highest input sequence number consumed so far.
    pub last_input_seq: u64,
}

impl StateMessage {
    pub fn from_scene(scene: &SceneState, tick: u64, leg_index: usize, legs_total: usize, last_input_seq: u64) -> Self {
        Self {
            tick,
            gripper: scene.gripper,
            jaws_closed: scene.jaws_closed,
            pegs: scene.pegs.clone(),
            target_index: scene.target_index,
            held_peg: scene.held_peg,
            phase: scene.phase,
            leg_index,
            legs_total,
            last_input_seq,
        }
    }

    pub fn from_arbiter(arb: &Arbiter) -> Self {
        Self::from_scene(arb.scene(), arb.tick_count(), arb.leg_index(), arb.plan().legs.len(), arb.last_input_seq())
    }

    pub fn held(&self) -> bool {
        self.held_peg.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        protocol_version: u32,
    },
    State(StateMessage),
    Input(OperatorInput),
    Event {
        tick: u64,
        event: ArbiterEvent,
    },
    /// Restart the trial, optionally from a new seed.
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    Resume {
        #[serde(default)]
        seq: u64,
    },
    Error {
        message: String,
    },
}

impl WireMessage {
    pub fn hello() -> Self {
        WireMessage::Hello { protocol_version: PROTOCOL_VERSION }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::State(_) => "state",
            WireMessage::Input(_) => "input",
            WireMessage::Event { .. } => "event",
            WireMessage::Reset { .. } => "reset",
            WireMessage::Resume { .. } => "resume",
            WireMessage::Error { .. } => "error",
        }
    }
}

/// One record, without the trailing newline.
pub fn encode(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode(record: &str) -> Result<WireMessage, ProtocolError> {
    let record = record.strip_suffix('\n').unwrap_or(record);
    let record = record.strip_suffix('\r').unwrap_or(record);
    if record.contains('\n') {
        return Err(ProtocolError::Multiline);
    }
    serde_json::from_str(record).map_err(|e| ProtocolError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Accepts a hello carrying the server's protocol version.
pub fn check_hello(msg: &WireMessage) -> Result<(), ProtocolError> {
    match msg {
        WireMessage::Hello { protocol_version } if *protocol_version == PROTOCOL_VERSION => Ok(()),
        WireMessage::Hello { protocol_version } => {
            Err(ProtocolError::Version { client: *protocol_version, server: PROTOCOL_VERSION })
        }
        other => Err(ProtocolError::ExpectedHello(other.type_name().to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_shape() {
        assert_eq!(encode(&WireMessage::hello()), r#"{"type":"hello","protocol_version":1}"#);
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(matches!(decode(r#"{"type":"teleport","x":1}"#), Err(ProtocolError::Malformed { .. })));
    }

    #[test]
    fn unknown_fields_ignored() {
        let m = decode(r#"{"type":"input","dx":1.5,"client_note":"hi","seq":4}"#).unwrap();
        match m {
            WireMessage::Input(i) => {
                assert_eq!(i.dx, 1.5);
                assert_eq!(i.seq, 4);
                assert!(!i.clutch);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_reports_position() {
        match decode(r#"{"type":"input","dx":}"#) {
            Err(ProtocolError::Malformed { line, column, .. }) => {
                assert_eq!(line, 1);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_checked() {
        assert!(check_hello(&WireMessage::hello()).is_ok());
        assert_eq!(
            check_hello(&WireMessage::Hello { protocol_version: 7 }),
            Err(ProtocolError::Version { client: 7, server: PROTOCOL_VERSION })
        );
        assert!(check_hello(&WireMessage::Resume { seq: 0 }).is_err());
    }
}
