//! Deterministic planar peg-transfer environment.
//!
//! The coarse phase is a discrete MDP over [`SceneState`] with the 27
//! [`Action`]s; the reward is the signed-square progress of the distance to
//! the target outside the threshold zone and of the orientation deviation
//! inside it. The manual phase applies continuous operator deltas and the
//! grasp/release rules.

mod action;
mod config;
pub mod log;
mod state;

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{Action, ACTION_COUNT, STEP_X_MM, STEP_Y_MM};
pub use config::{AngularStep, EnvConfig, Rect, Slot, StartPose};
pub use state::{half_turn_error, wrap_angle, wrap_square, Peg, Pose, SceneState};

use crate::arbiter::ControlPhase;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("action index {0} outside [0, 26]")]
    InvalidAction(usize),
    #[error("action levels ({0}, {1}, {2}) outside {{-1, 0, 1}}")]
    InvalidLevels(i8, i8, i8),
    #[error("workspace too small: no target position at least {min_separation} mm from the start")]
    WorkspaceTooSmall { min_separation: f64 },
    #[error("coarse actions are only accepted in the AutoCoarse phase (current: {0:?})")]
    WrongPhase(ControlPhase),
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
}

/// Initial target placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    RandomUniform,
    EvalA,
    EvalB,
    EvalC,
}

impl Layout {
    /// Slot position and head orientation of the fixed evaluation layouts.
    fn fixed(self) -> Option<(usize, f64)> {
        match self {
            Layout::RandomUniform => None,
            Layout::EvalA => Some((0, 0.0)),
            Layout::EvalB => Some((1, 0.35)),
            Layout::EvalC => Some((2, 0.7)),
        }
    }
}

impl FromStr for Layout {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" | "randomuniform" | "random_uniform" => Ok(Layout::RandomUniform),
            "evala" | "a" => Ok(Layout::EvalA),
            "evalb" | "b" => Ok(Layout::EvalB),
            "evalc" | "c" => Ok(Layout::EvalC),
            _ => Err(EnvError::UnknownLayout(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalReason {
    None,
    ReachedAndAligned,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: SceneState,
    pub reward: f64,
    pub d_prev: f64,
    pub d_next: f64,
    pub dtheta_prev: f64,
    pub dtheta_next: f64,
    pub terminal: bool,
    pub terminal_reason: TerminalReason,
}

/// Signed-square progress reward.
///
/// The distance branch applies while `d_next > d_threshold`; at or inside the
/// threshold the orientation branch applies.
pub fn reward(d_prev: f64, d_next: f64, dtheta_prev: f64, dtheta_next: f64, config: &EnvConfig) -> f64 {
    let progress = if d_next > config.d_threshold {
        d_prev - d_next
    } else {
        dtheta_prev - dtheta_next
    };
    progress * progress.abs()
}

/// The environment: a validated config plus pure transition functions.
#[derive(Clone, Debug)]
pub struct PegEnv {
    config: EnvConfig,
}

impl PegEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    fn start_pose(&self) -> Pose {
        let s = self.config.start;
        Pose { x: s.x, y: s.y, z: self.config.constant_height, roll: wrap_angle(s.roll) }
    }

    fn distractor_pegs(&self, first_id: u32) -> impl Iterator<Item = Peg> + '_ {
        self.config.distractors.iter().enumerate().map(move |(i, &(x, y))| Peg {
            id: first_id + i as u32,
            x,
            y,
            side_orientation: 0.0,
            side_length: self.config.peg_side,
            slot: None,
        })
    }

    pub fn reset(&self, seed: u64, layout: Layout) -> Result<SceneState, EnvError> {
        let cfg = &self.config;
        let gripper = self.start_pose();
        let target = match layout.fixed() {
            Some((slot_idx, orientation)) => {
                let slot = cfg.slots[slot_idx.min(cfg.slots.len() - 1)];
                Peg {
                    id: 0,
                    x: slot.x,
                    y: slot.y,
                    side_orientation: wrap_square(orientation),
                    side_length: cfg.peg_side,
                    slot: Some(slot.id),
                }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (x, y) = self.sample_target(&mut rng, gripper)?;
                let orientation = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
                Peg {
                    id: 0,
                    x,
                    y,
                    side_orientation: wrap_square(orientation),
                    side_length: cfg.peg_side,
                    slot: None,
                }
            }
        };
        let mut pegs = vec![target];
        pegs.extend(self.distractor_pegs(1));
        Ok(SceneState {
            gripper,
            jaws_closed: false,
            pegs,
            target_index: 0,
            held_peg: None,
            phase: ControlPhase::AutoCoarse,
            tick: 0,
            rng_seed: seed,
        })
    }

    /// Scene for a transfer trial: target peg sitting in `slot_id`.
    pub fn reset_at_slot(&self, seed: u64, slot_id: u32, orientation: f64, offset: (f64, f64)) -> Result<SceneState, EnvError> {
        let slot = *self
            .config
            .slot(slot_id)
            .ok_or_else(|| EnvError::InvalidConfig(format!("no slot {slot_id}")))?;
        let (x, y) = self.config.workspace.clamp(slot.x + offset.0, slot.y + offset.1);
        let mut pegs = vec![Peg {
            id: 0,
            x,
            y,
            side_orientation: wrap_square(orientation),
            side_length: self.config.peg_side,
            slot: Some(slot.id),
        }];
        pegs.extend(self.distractor_pegs(1));
        Ok(SceneState {
            gripper: self.start_pose(),
            jaws_closed: false,
            pegs,
            target_index: 0,
            held_peg: None,
            phase: ControlPhase::AutoCoarse,
            tick: 0,
            rng_seed: seed,
        })
    }

    fn sample_target(&self, rng: &mut ChaCha8Rng, start: Pose) -> Result<(f64, f64), EnvError> {
        let min_sep = 2.0 * self.config.d_threshold;
        let area = self.config.workspace.inset(self.config.peg_side / 2.0);
        let err = EnvError::WorkspaceTooSmall { min_separation: min_sep };
        if area.width() <= 0.0 || area.height() <= 0.0 {
            return Err(err);
        }
        let far_x = (area.x_min - start.x).abs().max((area.x_max - start.x).abs());
        let far_y = (area.y_min - start.y).abs().max((area.y_max - start.y).abs());
        if far_x.hypot(far_y) <= min_sep {
            return Err(err);
        }
        // Rejection sampling; the feasible region is non-empty but may be thin.
        for _ in 0..100_000 {
            let x = rng.gen_range(area.x_min..area.x_max);
            let y = rng.gen_range(area.y_min..area.y_max);
            if (x - start.x).hypot(y - start.y) >= min_sep {
                return Ok((x, y));
            }
        }
        Err(err)
    }

    /// Applies one coarse action.
    pub fn step(&self, state: &SceneState, action: Action) -> Result<StepOutcome, EnvError> {
        if state.phase != ControlPhase::AutoCoarse {
            return Err(EnvError::WrongPhase(state.phase));
        }
        let cfg = &self.config;
        let d_prev = state.distance_to_target();
        let dtheta_prev = state.delta_theta();

        let (dx, dy, dphi) = action.deltas(cfg);
        let mut next = state.clone();
        let (x, y) = cfg.workspace.clamp(state.gripper.x + dx, state.gripper.y + dy);
        next.move_gripper(x, y, state.gripper.z, state.gripper.roll + dphi);
        next.tick += 1;

        let d_next = next.distance_to_target();
        let dtheta_next = next.delta_theta();
        let mut r = reward(d_prev, d_next, dtheta_prev, dtheta_next, cfg);
        let terminal_reason = if d_next <= cfg.d_threshold && dtheta_next <= cfg.align_tolerance {
            r += cfg.completion_bonus;
            TerminalReason::ReachedAndAligned
        } else if next.tick >= cfg.max_steps {
            TerminalReason::MaxSteps
        } else {
            TerminalReason::None
        };
        Ok(StepOutcome {
            next_state: next,
            reward: r,
            d_prev,
            d_next,
            dtheta_prev,
            dtheta_next,
            terminal: terminal_reason != TerminalReason::None,
            terminal_reason,
        })
    }

    /// Continuous manual-phase update followed by clutch handling.
    ///
    /// Closing the clutch grasps the target only within `grasp_radius` and
    /// `2·align_tolerance`; otherwise the jaws close empty. Opening it drops a
    /// held peg at the gripper and assigns the nearest slot within
    /// `grasp_radius`, if any.
    pub fn manual_step(&self, state: &SceneState, dx: f64, dy: f64, dz: f64, droll: f64, clutch: bool) -> SceneState {
        let cfg = &self.config;
        let mut next = state.clone();
        let (x, y) = cfg.workspace.clamp(state.gripper.x + dx, state.gripper.y + dy);
        let z = (state.gripper.z + dz).clamp(cfg.z_min, cfg.z_max);
        next.move_gripper(x, y, z, state.gripper.roll + droll);

        if clutch && !next.jaws_closed {
            next.jaws_closed = true;
            if next.distance_to_target() <= cfg.grasp_radius && next.delta_theta() <= 2.0 * cfg.align_tolerance {
                let t = next.target_index;
                next.held_peg = Some(t);
                let g = next.gripper;
                let peg = &mut next.pegs[t];
                peg.x = g.x;
                peg.y = g.y;
                peg.slot = None;
            }
        } else if !clutch && next.jaws_closed {
            next.jaws_closed = false;
            if let Some(i) = next.held_peg.take() {
                let peg = &mut next.pegs[i];
                peg.slot = cfg
                    .slots
                    .iter()
                    .map(|s| (s.id, (s.x - peg.x).hypot(s.y - peg.y)))
                    .filter(|&(_, d)| d <= cfg.grasp_radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(id, _)| id);
            }
        }
        next.tick += 1;
        next
    }

    /// Puts the gripper back at the start pose with open jaws.
    pub fn teleport_to_start(&self, state: &SceneState) -> SceneState {
        let mut next = state.clone();
        next.held_peg = None;
        next.jaws_closed = false;
        next.gripper = self.start_pose();
        next.tick = 0;
        next
    }
}
