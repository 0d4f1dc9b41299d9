//! Double deep Q-learning, written out by hand.
//!
//! The online network θ picks the next action and the target network θ′
//! scores it; θ is regressed toward `r + γ·Q_θ′(s′, argmax_a Q_θ(s′, a))`
//! with the target held constant, and θ′ is refreshed from θ on a fixed
//! period.

pub mod checkpoint;
pub mod grid;
mod learner;
mod network;
mod optim;
mod replay;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use learner::{
    double_q_target, double_q_target_raw, double_q_value, epsilon_at, loss_and_gradient, select_action, DoubleDqn,
    LossKind, ObservationKind, Regression, TrainConfig, Transition,
};
pub use network::{argmax, InputShape, LayerSpec, QNetwork, Scalar, Topology, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use replay::ReplayBuffer;
pub use train::{
    agent_from_checkpoint, evaluate, greedy_episode, observation_kind_for, observer_for, topology_for, train, EpisodeRecord, EpisodicTask,
    EvalSummary, GreedyAgent, PegTask, TrainLogWriter, TrainOutcome,
};

use crate::renderer::RenderError;
use crate::sim_env::EnvError;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("action {0} outside the network's output")]
    InvalidAction(usize),
    #[error("non-finite loss or parameters after update")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("step called before reset")]
    NotStarted,
    #[error("no observer matches network input {0:?}")]
    UnsupportedInput(InputShape),
    #[error("training sink: {0}")]
    Sink(#[from] std::io::Error),
}
