//! Peg-transfer simulator with a double-DQN coarse controller and a manual
//! override arbiter.

pub mod arbiter;
pub mod config;
pub mod ddqn;
pub mod gateway;
pub mod metrics;
pub mod renderer;
pub mod sim_env;
