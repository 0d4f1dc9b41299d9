use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::arbiter::ControlPhase;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wraps a square's orientation into [0, π/2).
pub fn wrap_square(a: f64) -> f64 {
    let r = a.rem_euclid(FRAC_PI_2);
    if r >= FRAC_PI_2 {
        0.0
    } else {
        r
    }
}

/// Signed roll error modulo the two-jaw symmetry, in (-π/2, π/2].
pub fn half_turn_error(a: f64) -> f64 {
    let e = wrap_angle(a);
    if e > FRAC_PI_2 {
        e - PI
    } else if e <= -FRAC_PI_2 {
        e + PI
    } else {
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peg {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    /// Rotation of the square head, in [0, π/2).
    pub side_orientation: f64,
    pub side_length: f64,
    pub slot: Option<u32>,
}

impl Peg {
    /// Outward normal angle of side `k` (0..4).
    pub fn side_normal(&self, k: usize) -> f64 {
        self.side_orientation + k as f64 * FRAC_PI_2
    }

    pub fn side_midpoint(&self, k: usize) -> (f64, f64) {
        let a = self.side_normal(k);
        let h = self.side_length / 2.0;
        (self.x + h * a.cos(), self.y + h * a.sin())
    }

    /// Index of the side whose midpoint is nearest `(x, y)`; ties go to the
    /// smallest index.
    pub fn closest_side(&self, x: f64, y: f64) -> usize {
        const TIE: f64 = 1e-9;
        let dist2 = |k: usize| {
            let (mx, my) = self.side_midpoint(k);
            (mx - x).powi(2) + (my - y).powi(2)
        };
        let mut best = 0;
        let mut best_d = dist2(0);
        for k in 1..4 {
            let d = dist2(k);
            if d < best_d - TIE {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// True when `(x, y)` lies inside the square head.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.side_orientation.sin_cos();
        let (rx, ry) = (x - self.x, y - self.y);
        let u = rx * c + ry * s;
        let v = -rx * s + ry * c;
        let h = self.side_length / 2.0;
        u.abs() <= h && v.abs() <= h
    }
}

/// Full simulator truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub gripper: Pose,
    pub jaws_closed: bool,
    pub pegs: Vec<Peg>,
    pub target_index: usize,
    pub held_peg: Option<usize>,
    pub phase: ControlPhase,
    pub tick: u64,
    /// Seed the scene was generated from.
    pub rng_seed: u64,
}

impl SceneState {
    pub fn target(&self) -> &Peg {
        &self.pegs[self.target_index]
    }

    /// Planar distance from the gripper tip to the target peg centre.
    pub fn distance_to_target(&self) -> f64 {
        let t = self.target();
        (self.gripper.x - t.x).hypot(self.gripper.y - t.y)
    }

    /// Desired roll: outward normal of the target side closest to the tip.
    pub fn desired_roll(&self) -> f64 {
        let t = self.target();
        t.side_normal(t.closest_side(self.gripper.x, self.gripper.y))
    }

    /// Signed roll error against the desired roll under jaw symmetry.
    pub fn alignment_error(&self) -> f64 {
        half_turn_error(self.gripper.roll - self.desired_roll())
    }

    /// Orientation deviation in [0, π/2].
    pub fn delta_theta(&self) -> f64 {
        let base = self.gripper.roll - self.desired_roll();
        wrap_angle(base).abs().min(wrap_angle(base + PI).abs())
    }

    /// Moves the gripper and drags any held peg with it.
    pub(crate) fn move_gripper(&mut self, x: f64, y: f64, z: f64, roll: f64) {
        let droll = roll - self.gripper.roll;
        self.gripper = Pose { x, y, z, roll: wrap_angle(roll) };
        if let Some(i) = self.held_peg {
            let peg = &mut self.pegs[i];
            peg.x = x;
            peg.y = y;
            peg.side_orientation = wrap_square(peg.side_orientation + droll);
        }
    }
}
