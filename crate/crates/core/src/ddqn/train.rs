//! The episodic training loop and greedy evaluation.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::learner::{epsilon_at, select_action, DoubleDqn, ObservationKind, TrainConfig, Transition};
use super::network::{argmax, InputShape, QNetwork, Topology};
use super::replay::ReplayBuffer;
use super::{NetError, TrainError};
use crate::arbiter::CoarsePolicy;
use crate::renderer::{FeatureObserver, FrameObserver, Observation, Observer, RenderConfig, FEATURE_LEN, STACK_LEN};
use crate::sim_env::{Action, EnvConfig, Layout, PegEnv, SceneState, TerminalReason, ACTION_COUNT};

/// Simulated clock used to stamp training logs.
pub const SIM_TICK_MS: f64 = 1000.0 / 30.0;

#[derive(Clone, Debug)]
pub struct TaskStep {
    pub observation: Observation,
    pub reward: f64,
    /// Genuine terminal state: no bootstrapping past it.
    pub terminal: bool,
    /// The episode is over (terminal or cut off).
    pub done: bool,
    pub success: bool,
}

/// Anything the training loop can drive.
pub trait EpisodicTask {
    fn input_shape(&self) -> InputShape;
    fn reset(&mut self, episode_seed: u64) -> Result<Observation, TrainError>;
    fn step(&mut self, action: usize) -> Result<TaskStep, TrainError>;
}

/// The peg environment seen through an [`Observer`].
pub struct PegTask {
    env: PegEnv,
    observer: Box<dyn Observer + Send>,
    layout: Layout,
    scene: Option<SceneState>,
}

impl PegTask {
    pub fn new(env: PegEnv, observer: Box<dyn Observer + Send>, layout: Layout) -> Self {
        Self { env, observer, layout, scene: None }
    }

    pub fn scene(&self) -> Option<&SceneState> {
        self.scene.as_ref()
    }
}

impl EpisodicTask for PegTask {
    fn input_shape(&self) -> InputShape {
        self.observer.input_shape()
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Observation, TrainError> {
        let scene = self.env.reset(episode_seed, self.layout)?;
        let obs = self.observer.begin(&scene, self.env.config())?;
        self.scene = Some(scene);
        Ok(obs)
    }

    fn step(&mut self, action: usize) -> Result<TaskStep, TrainError> {
        let scene = self.scene.as_ref().ok_or(TrainError::NotStarted)?;
        let out = self.env.step(scene, Action::from_index(action)?)?;
        let observation = self.observer.observe(&out.next_state, self.env.config())?;
        self.scene = Some(out.next_state);
        let success = out.terminal_reason == TerminalReason::ReachedAndAligned;
        Ok(TaskStep { observation, reward: out.reward, terminal: success, done: out.terminal, success })
    }
}

pub fn observer_for(kind: ObservationKind, render: &RenderConfig) -> Result<Box<dyn Observer + Send>, TrainError> {
    Ok(match kind {
        ObservationKind::Features => Box::new(FeatureObserver),
        ObservationKind::Frames { resolution } => {
            Box::new(FrameObserver::new(render.clone().with_resolution(resolution, resolution))?)
        }
    })
}

/// Observation mode implied by a network's input shape.
pub fn observation_kind_for(shape: InputShape) -> Result<ObservationKind, TrainError> {
    match shape {
        InputShape::Flat(FEATURE_LEN) => Ok(ObservationKind::Features),
        InputShape::Image { channels: STACK_LEN, height, width } if height == width => {
            Ok(ObservationKind::Frames { resolution: height })
        }
        other => Err(TrainError::UnsupportedInput(other)),
    }
}

pub fn topology_for(kind: ObservationKind, config: &TrainConfig) -> Topology {
    match kind {
        ObservationKind::Features => Topology::mlp(FEATURE_LEN, &config.hidden, ACTION_COUNT),
        ObservationKind::Frames { resolution } => Topology::frame_default(STACK_LEN, resolution, resolution),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    pub discounted_return: f64,
    pub undiscounted_return: f64,
    pub length: usize,
    pub epsilon: f64,
    pub success: bool,
    /// Simulated milliseconds elapsed since training began.
    pub sim_ms: f64,
    pub seed: u64,
}

/// Σ γ^t r_{t+1} over an episode's rewards.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

pub struct TrainOutcome {
    pub learner: DoubleDqn,
    pub episodes: Vec<EpisodeRecord>,
}

const POLICY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const REPLAY_STREAM: u64 = 0xd1b5_4a32_d192_ed03;
const INIT_STREAM: u64 = 0x8cb9_2ba7_2f3d_8dd7;

/// Runs `config.max_episodes` episodes of ε-greedy double-DQN training.
///
/// Every environment step stores a transition and, once the replay holds a
/// full batch, performs one `train_step`; the target network is synced every
/// `target_sync_period` environment steps (and once before the first episode).
pub fn train<T, S>(task: &mut T, topology: Topology, config: &TrainConfig, mut sink: S) -> Result<TrainOutcome, TrainError>
where
    T: EpisodicTask,
    S: FnMut(&EpisodeRecord) -> Result<(), TrainError>,
{
    config.validate()?;
    if topology.input != task.input_shape() {
        return Err(NetError::ShapeMismatch { expected: task.input_shape().len(), got: topology.input.len() }.into());
    }
    let mut learner = DoubleDqn::new(topology, config, config.seed ^ INIT_STREAM)?;
    learner.sync_target()?;
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy_rng = ChaCha8Rng::seed_from_u64(config.seed ^ POLICY_STREAM);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(config.seed ^ REPLAY_STREAM);
    let mut global_step: u64 = 0;
    let mut episodes = Vec::with_capacity(config.max_episodes);
    let mut rewards = Vec::new();

    for episode in 1..=config.max_episodes {
        let seed = episode_rng.gen::<u64>();
        let mut obs = task.reset(seed)?;
        rewards.clear();
        let success = loop {
            let epsilon = epsilon_at(global_step, config);
            let action = select_action(learner.online(), &obs.to_input(), epsilon, &mut policy_rng)?;
            let step = task.step(action)?;
            rewards.push(step.reward);
            replay.push(Transition {
                s: obs,
                a: action,
                r: step.reward as f32,
                s_next: step.observation.clone(),
                terminal: step.terminal,
            });
            global_step += 1;
            if replay.len() >= config.batch_size {
                let batch = replay.sample(&mut replay_rng, config.batch_size);
                learner.train_step(&batch)?;
            }
            if global_step % config.target_sync_period == 0 {
                learner.sync_target()?;
            }
            obs = step.observation;
            if step.done {
                break step.success;
            }
        };
        let record = EpisodeRecord {
            episode,
            discounted_return: discounted_return(&rewards, config.gamma),
            undiscounted_return: rewards.iter().sum(),
            length: rewards.len(),
            epsilon: epsilon_at(global_step, config),
            success,
            sim_ms: global_step as f64 * SIM_TICK_MS,
            seed,
        };
        sink(&record)?;
        episodes.push(record);
    }
    Ok(TrainOutcome { learner, episodes })
}

pub const TRAIN_LOG_HEADER: &str = "# episode\tdiscounted_return\tundiscounted_return\tlength\tepsilon\tsim_ms";

/// Tab-separated training log, one line per episode.
pub struct TrainLogWriter<W: Write> {
    out: W,
}

impl<W: Write> TrainLogWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TRAIN_LOG_HEADER}")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, r: &EpisodeRecord) -> io::Result<()> {
        writeln!(
            self.out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.episode, r.discounted_return, r.undiscounted_return, r.length, r.epsilon, r.sim_ms
        )
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Greedy (ε = 0) controller around a trained network.
pub struct GreedyAgent {
    net: QNetwork<f32>,
    observer: Box<dyn Observer + Send>,
    env: EnvConfig,
    started: bool,
}

impl GreedyAgent {
    pub fn new(net: QNetwork<f32>, observer: Box<dyn Observer + Send>, env: EnvConfig) -> Result<Self, TrainError> {
        if net.topology().input != observer.input_shape() {
            return Err(TrainError::UnsupportedInput(net.topology().input));
        }
        if net.output_width() != ACTION_COUNT {
            return Err(NetError::ShapeMismatch { expected: ACTION_COUNT, got: net.output_width() }.into());
        }
        Ok(Self { net, observer, env, started: false })
    }

    pub fn network(&self) -> &QNetwork<f32> {
        &self.net
    }

    fn choose(&self, obs: &Observation) -> Result<Action, TrainError> {
        let q = self.net.forward(&obs.to_input())?;
        Ok(Action::from_index(argmax(&q))?)
    }

    pub fn try_act(&mut self, scene: &SceneState) -> Result<Action, TrainError> {
        let obs = if self.started {
            self.observer.observe(scene, &self.env)?
        } else {
            self.started = true;
            self.observer.begin(scene, &self.env)?
        };
        self.choose(&obs)
    }
}

/// Greedy agent for a loaded checkpoint; the observation mode follows the
/// network's input shape.
pub fn agent_from_checkpoint(ck: &Checkpoint, render: &RenderConfig, env: EnvConfig) -> Result<GreedyAgent, TrainError> {
    let kind = observation_kind_for(ck.online.topology().input)?;
    GreedyAgent::new(ck.online.clone(), observer_for(kind, render)?, env)
}

impl CoarsePolicy for GreedyAgent {
    fn begin(&mut self, _scene: &SceneState) {
        self.started = false;
    }

    fn act(&mut self, scene: &SceneState) -> Option<Action> {
        match self.try_act(scene) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("agent failed to act: {e}");
                None
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub successes: usize,
    pub mean_length: f64,
}

impl EvalSummary {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

/// Runs one greedy episode from `seed`; returns (success, length).
pub fn greedy_episode(env: &PegEnv, agent: &mut GreedyAgent, layout: Layout, seed: u64) -> Result<(bool, usize), TrainError> {
    let mut scene = env.reset(seed, layout)?;
    agent.begin(&scene);
    loop {
        let action = agent.try_act(&scene)?;
        let out = env.step(&scene, action)?;
        if out.terminal {
            return Ok((out.terminal_reason == TerminalReason::ReachedAndAligned, out.next_state.tick as usize));
        }
        scene = out.next_state;
    }
}

/// Greedy rollouts over `seeds`.
pub fn evaluate(env: &PegEnv, agent: &mut GreedyAgent, layout: Layout, seeds: &[u64]) -> Result<EvalSummary, TrainError> {
    let mut successes = 0;
    let mut total_len = 0;
    for &seed in seeds {
        let (ok, len) = greedy_episode(env, agent, layout, seed)?;
        successes += usize::from(ok);
        total_len += len;
    }
    let mean_length = if seeds.is_empty() { 0.0 } else { total_len as f64 / seeds.len() as f64 };
    Ok(EvalSummary { episodes: seeds.len(), successes, mean_length })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_discounted_return() {
        assert!((discounted_return(&[1.0, 1.0], 0.95) - 1.95).abs() < 1e-12);
        assert_eq!(discounted_return(&[], 0.95), 0.0);
    }

    #[test]
    fn observation_kind_from_shape() {
        assert_eq!(observation_kind_for(InputShape::Flat(FEATURE_LEN)).unwrap(), ObservationKind::Features);
        assert_eq!(
            observation_kind_for(InputShape::Image { channels: 4, height: 32, width: 32 }).unwrap(),
            ObservationKind::Frames { resolution: 32 }
        );
        assert!(observation_kind_for(InputShape::Flat(3)).is_err());
    }

    #[test]
    fn short_training_run_is_reproducible() {
        let run = || {
            let env = PegEnv::new(EnvConfig::default()).unwrap();
            let cfg = TrainConfig { max_episodes: 3, seed: 11, batch_size: 8, epsilon_decay_steps: 100, ..TrainConfig::default() };
            let mut task = PegTask::new(env, Box::new(FeatureObserver), cfg.layout);
            let topo = topology_for(ObservationKind::Features, &cfg);
            let out = train(&mut task, topo, &cfg, |_| Ok(())).unwrap();
            (out.episodes, out.learner.online().params().to_vec())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.iter().all(|r| r.length > 0 && r.length <= 200));
    }

    #[test]
    fn log_lines_match_records() {
        let mut w = TrainLogWriter::new(Vec::new()).unwrap();
        let r = EpisodeRecord {
            episode: 1,
            discounted_return: 1.95,
            undiscounted_return: 2.0,
            length: 2,
            epsilon: 0.5,
            success: true,
            sim_ms: 66.5,
            seed: 0,
        };
        w.record(&r).unwrap();
        let text = String::from_utf8(w.out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1\t1.95\t2\t2\t0.5\t66.5");
    }
}
