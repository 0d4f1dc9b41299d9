//! A discretized reach-and-orient task small enough to solve exactly.
//!
//! Positions form a 5×5 lattice whose spacing equals the coarse action steps
//! (6 mm in x, 8 mm in y) around a peg at the origin; the roll takes 8 values
//! spaced π/8 apart, which closes under the two-jaw symmetry. Rewards and
//! termination follow the continuous environment exactly, so value iteration
//! on this table gives the optimal action values the learner should recover.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::InputShape;
use super::train::{EpisodicTask, TaskStep};
use super::TrainError;
use crate::arbiter::ControlPhase;
use crate::renderer::Observation;
use crate::sim_env::{reward, Action, EnvConfig, Peg, Pose, SceneState, STEP_X_MM, STEP_Y_MM};

pub const GRID_X: usize = 5;
pub const GRID_Y: usize = 5;
pub const GRID_ANGLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridStep {
    pub next: usize,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    config: EnvConfig,
    target: Peg,
    max_steps: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::new(EnvConfig::default())
    }
}

impl GridWorld {
    pub fn new(config: EnvConfig) -> Self {
        let target = Peg { id: 0, x: 0.0, y: 0.0, side_orientation: 0.0, side_length: config.peg_side, slot: None };
        Self { config, target, max_steps: 50 }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state_count(&self) -> usize {
        GRID_X * GRID_Y * GRID_ANGLES
    }

    pub fn decode(&self, s: usize) -> (usize, usize, usize) {
        (s / (GRID_Y * GRID_ANGLES), (s / GRID_ANGLES) % GRID_Y, s % GRID_ANGLES)
    }

    pub fn encode(&self, ix: usize, iy: usize, ia: usize) -> usize {
        (ix * GRID_Y + iy) * GRID_ANGLES + ia
    }

    /// The continuous scene a lattice state stands for.
    pub fn scene(&self, s: usize) -> SceneState {
        let (ix, iy, ia) = self.decode(s);
        let cx = (GRID_X / 2) as f64;
        let cy = (GRID_Y / 2) as f64;
        SceneState {
            gripper: Pose {
                x: (ix as f64 - cx) * STEP_X_MM,
                y: (iy as f64 - cy) * STEP_Y_MM,
                z: self.config.constant_height,
                roll: ia as f64 * PI / GRID_ANGLES as f64,
            },
            jaws_closed: false,
            pegs: vec![self.target.clone()],
            target_index: 0,
            held_peg: None,
            phase: ControlPhase::AutoCoarse,
            tick: 0,
            rng_seed: 0,
        }
    }

    fn measures(&self, s: usize) -> (f64, f64) {
        let scene = self.scene(s);
        (scene.distance_to_target(), scene.delta_theta())
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        let (d, dt) = self.measures(s);
        d <= self.config.d_threshold && dt <= self.config.align_tolerance
    }

    pub fn transition(&self, s: usize, action: Action) -> GridStep {
        let (ix, iy, ia) = self.decode(s);
        let (lx, ly, lp) = action.levels();
        let shift = |i: usize, l: i8, n: usize| (i as i64 + i64::from(l)).clamp(0, n as i64 - 1) as usize;
        let next = self.encode(
            shift(ix, lx, GRID_X),
            shift(iy, ly, GRID_Y),
            (ia as i64 + i64::from(lp)).rem_euclid(GRID_ANGLES as i64) as usize,
        );
        let (d0, t0) = self.measures(s);
        let (d1, t1) = self.measures(next);
        let terminal = self.is_terminal(next);
        let bonus = if terminal { self.config.completion_bonus } else { 0.0 };
        GridStep { next, reward: reward(d0, d1, t0, t1, &self.config) + bonus, terminal }
    }

    pub fn one_hot(&self, s: usize) -> Observation {
        let mut v = vec![0.0f32; self.state_count()];
        v[s] = 1.0;
        Observation::Features(Arc::from(v))
    }
}

/// Episodes from uniformly drawn non-terminal start states.
pub struct GridTask {
    world: GridWorld,
    state: usize,
    steps: usize,
}

impl GridTask {
    pub fn new(world: GridWorld) -> Self {
        Self { world, state: 0, steps: 0 }
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }
}

impl EpisodicTask for GridTask {
    fn input_shape(&self) -> InputShape {
        InputShape::Flat(self.world.state_count())
    }

    fn reset(&mut self, episode_seed: u64) -> Result<Observation, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        loop {
            let s = rng.gen_range(0..self.world.state_count());
            if !self.world.is_terminal(s) {
                self.state = s;
                self.steps = 0;
                return Ok(self.world.one_hot(s));
            }
        }
    }

    fn step(&mut self, action: usize) -> Result<TaskStep, TrainError> {
        let step = self.world.transition(self.state, Action::from_index(action)?);
        self.state = step.next;
        self.steps += 1;
        Ok(TaskStep {
            observation: self.world.one_hot(step.next),
            reward: step.reward,
            terminal: step.terminal,
            done: step.terminal || self.steps >= self.world.max_steps,
            success: step.terminal,
        })
    }
}
