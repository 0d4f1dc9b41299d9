//! Operator-facing surface: wire protocol, session server and trial logs.

pub mod protocol;
pub mod server;
pub mod trial_log;

pub use protocol::{check_hello, decode, encode, ProtocolError, StateMessage, WireMessage, PROTOCOL_VERSION};
pub use server::{serve_on, CheckpointInfo, ServerError, SessionConfig, SessionReport};
pub use trial_log::{fnv1a, resimulate, verify_replay, TrialHeader, TrialLog, TrialLogError, TrialSummary, TRIAL_LOG_VERSION};
