use serde::{Deserialize, Serialize};

use super::EnvError;

/// Axis-aligned rectangle in workspace millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x_min, self.x_max), y.clamp(self.y_min, self.y_max))
    }

    /// Shrinks every edge inwards by `margin`.
    pub fn inset(&self, margin: f64) -> Rect {
        Rect::new(self.x_min + margin, self.x_max - margin, self.y_min + margin, self.y_max - margin)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    fn is_valid(&self) -> bool {
        [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min
    }
}

/// How the coarse-control angular step of "10" is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngularStep {
    #[default]
    Degrees10,
    Radians10,
}

impl AngularStep {
    pub fn radians(self) -> f64 {
        match self {
            AngularStep::Degrees10 => 10f64.to_radians(),
            AngularStep::Radians10 => 10.0,
        }
    }
}

/// A numbered board position a peg can occupy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

/// Gripper pose used for episode starts and trial resets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub roll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub d_threshold: f64,
    pub gamma: f64,
    pub max_steps: u64,
    pub workspace: Rect,
    pub angular_step: AngularStep,
    pub grasp_radius: f64,
    pub align_tolerance: f64,
    pub constant_height: f64,
    /// Allowed gripper height range during manual control.
    pub z_min: f64,
    pub z_max: f64,
    pub start: StartPose,
    pub peg_side: f64,
    pub slots: Vec<Slot>,
    /// Non-target pegs placed on the board for every layout.
    pub distractors: Vec<(f64, f64)>,
    /// Extra reward on the step that reaches the goal. Zero keeps the
    /// progress reward unmodified; see the README for why it exists.
    pub completion_bonus: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            d_threshold: 10.0,
            gamma: 0.95,
            max_steps: 200,
            workspace: Rect::new(-60.0, 60.0, -60.0, 60.0),
            angular_step: AngularStep::Degrees10,
            grasp_radius: 5.0,
            align_tolerance: 0.0873,
            constant_height: 20.0,
            z_min: 0.0,
            z_max: 60.0,
            start: StartPose { x: 0.0, y: -50.0, roll: 0.0 },
            peg_side: 8.0,
            slots: vec![
                Slot { id: 1, x: -25.0, y: 35.0 },
                Slot { id: 2, x: 25.0, y: 35.0 },
                Slot { id: 3, x: 0.0, y: -5.0 },
            ],
            distractors: vec![(-45.0, -5.0), (45.0, -5.0)],
            completion_bonus: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: &str| Err(EnvError::InvalidConfig(msg.to_string()));
        if !self.workspace.is_valid() {
            return bad("workspace must have positive, finite extent");
        }
        if !(self.grasp_radius > 0.0 && self.d_threshold > self.grasp_radius) {
            return bad("requires d_threshold > grasp_radius > 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.align_tolerance > 0.0 && self.align_tolerance.is_finite()) {
            return bad("align_tolerance must be positive");
        }
        if !(self.peg_side > 0.0 && self.peg_side.is_finite()) {
            return bad("peg_side must be positive");
        }
        if !(self.z_min <= self.constant_height && self.constant_height <= self.z_max) {
            return bad("constant_height must lie in [z_min, z_max]");
        }
        if !self.workspace.contains(self.start.x, self.start.y) {
            return bad("start pose outside workspace");
        }
        if !(self.completion_bonus >= 0.0 && self.completion_bonus.is_finite()) {
            return bad("completion_bonus must be finite and non-negative");
        }
        if self.slots.is_empty() {
            return bad("at least one slot is required");
        }
        for s in &self.slots {
            if !self.workspace.contains(s.x, s.y) {
                return bad("slot outside workspace");
            }
        }
        Ok(())
    }

    pub fn angular_step_rad(&self) -> f64 {
        self.angular_step.radians()
    }

    pub fn slot(&self, id: u32) -> Option<&Slot> {
        self.slots.iter().find(|s| s.id == id)
    }
}
