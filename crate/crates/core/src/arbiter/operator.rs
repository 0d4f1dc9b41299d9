//! Scripted stand-in for the human operator.

use serde::{Deserialize, Serialize};

use super::{Leg, OperatorInput};
use crate::sim_env::{EnvConfig, SceneState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub max_step_mm: f64,
    pub max_roll_rad: f64,
    /// Grasp point distance from the peg centre along the closest side's normal.
    pub standoff_mm: f64,
    pub grasp_tolerance_mm: f64,
    pub place_tolerance_mm: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { max_step_mm: 2.0, max_roll_rad: 0.05, standoff_mm: 2.0, grasp_tolerance_mm: 0.25, place_tolerance_mm: 0.5 }
    }
}

/// Proportional controller: approach the closest side, align, grasp, carry
/// to the leg's to-slot, release.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VirtualOperator {
    pub config: OperatorConfig,
}

impl VirtualOperator {
    pub fn new(config: OperatorConfig) -> Self {
        Self { config }
    }

    fn toward(&self, ex: f64, ey: f64) -> (f64, f64) {
        let n = ex.hypot(ey);
        let cap = self.config.max_step_mm;
        if n <= cap {
            (ex, ey)
        } else {
            (ex * cap / n, ey * cap / n)
        }
    }

    pub fn command(&self, scene: &SceneState, leg: &Leg, env: &EnvConfig) -> OperatorInput {
        let c = &self.config;
        let g = scene.gripper;
        if scene.held_peg.is_some() {
            let Some(slot) = env.slot(leg.to_slot) else {
                return OperatorInput::motion(0.0, 0.0, 0.0, 0.0, false);
            };
            let (ex, ey) = (slot.x - g.x, slot.y - g.y);
            if ex.hypot(ey) <= c.place_tolerance_mm {
                return OperatorInput::motion(0.0, 0.0, 0.0, 0.0, false);
            }
            let (dx, dy) = self.toward(ex, ey);
            return OperatorInput::motion(dx, dy, 0.0, 0.0, true);
        }
        if scene.jaws_closed {
            return OperatorInput::motion(0.0, 0.0, 0.0, 0.0, false);
        }
        let peg = scene.target();
        let phi = scene.desired_roll();
        let aim = (peg.x + c.standoff_mm * phi.cos(), peg.y + c.standoff_mm * phi.sin());
        let (ex, ey) = (aim.0 - g.x, aim.1 - g.y);
        let err = scene.alignment_error();
        if ex.hypot(ey) <= c.grasp_tolerance_mm && scene.delta_theta() <= env.align_tolerance / 2.0 {
            return OperatorInput::motion(0.0, 0.0, 0.0, 0.0, true);
        }
        let (dx, dy) = self.toward(ex, ey);
        let dz = (env.constant_height - g.z).clamp(-c.max_step_mm, c.max_step_mm);
        let droll = (-err).clamp(-c.max_roll_rad, c.max_roll_rad);
        OperatorInput::motion(dx, dy, dz, droll, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_env::{Layout, PegEnv};

    fn scene() -> (PegEnv, SceneState) {
        let env = PegEnv::new(EnvConfig::default()).unwrap();
        let s = env.reset(0, Layout::EvalA).unwrap();
        (env, s)
    }

    #[test]
    fn close_and_aligned_emits_grasp() {
        let (env, mut s) = scene();
        let t = s.target().clone();
        s.gripper.x = t.x;
        s.gripper.y = t.y - 3.0;
        s.gripper.roll = s.desired_roll();
        // Standoff 3 mm instead of 2 so the aim coincides with the tip.
        let op = VirtualOperator::new(OperatorConfig { standoff_mm: 3.0, ..OperatorConfig::default() });
        let leg = Leg { from_slot: 1, to_slot: 2 };
        let cmd = op.command(&s, &leg, env.config());
        assert!(cmd.clutch);
        assert_eq!((cmd.dx, cmd.dy, cmd.droll), (0.0, 0.0, 0.0));
    }

    #[test]
    fn carrying_moves_toward_slot_within_cap() {
        let (env, mut s) = scene();
        let slot = *env.config().slot(2).unwrap();
        s.gripper.x = slot.x - 30.0;
        s.gripper.y = slot.y;
        s.held_peg = Some(0);
        s.jaws_closed = true;
        let cmd = VirtualOperator::default().command(&s, &Leg { from_slot: 1, to_slot: 2 }, env.config());
        assert!(cmd.clutch);
        assert!(cmd.dx > 0.0);
        assert!(cmd.dx.hypot(cmd.dy) <= 2.0 + 1e-12);
    }

    #[test]
    fn empty_closed_jaws_reopen() {
        let (env, mut s) = scene();
        s.jaws_closed = true;
        let cmd = VirtualOperator::default().command(&s, &Leg { from_slot: 1, to_slot: 2 }, env.config());
        assert!(!cmd.clutch);
    }
}
