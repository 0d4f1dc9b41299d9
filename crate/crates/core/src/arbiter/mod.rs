//! Coarse-to-fine control flow: the agent drives until it reaches the
//! target (or the operator moves the device), the operator finishes the
//! grasp and transfer, and the sequencer resets the gripper for the next leg.

mod operator;
pub mod trial;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use operator::{OperatorConfig, VirtualOperator};
pub use trial::{compare_modes, initial_scene, run_scripted_trial, TrialOutcome, TrialSession};

use crate::sim_env::{Action, PegEnv, Rect, SceneState, TerminalReason};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlPhase {
    AutoCoarse,
    ManualPrecision,
    Resetting,
    TrialComplete,
}

impl ControlPhase {
    pub fn can_transition_to(self, next: ControlPhase) -> bool {
        use ControlPhase::*;
        matches!(
            (self, next),
            (AutoCoarse, ManualPrecision)
                | (ManualPrecision, AutoCoarse)
                | (ManualPrecision, Resetting)
                | (Resetting, AutoCoarse)
                | (AutoCoarse | ManualPrecision | Resetting, TrialComplete)
        )
    }
}

impl fmt::Display for ControlPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The coarse controller as seen by the arbiter. `None` means "no move".
pub trait CoarsePolicy {
    fn begin(&mut self, scene: &SceneState);
    fn act(&mut self, scene: &SceneState) -> Option<Action>;
}

/// Never moves; used for fully manual trials.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdlePolicy;

impl CoarsePolicy for IdlePolicy {
    fn begin(&mut self, _scene: &SceneState) {}

    fn act(&mut self, _scene: &SceneState) -> Option<Action> {
        None
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ArbiterError {
    #[error("invalid trial plan: {0}")]
    InvalidPlan(String),
    #[error("invalid arbiter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] crate::sim_env::EnvError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub from_slot: u32,
    pub to_slot: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialPlan {
    pub legs: Vec<Leg>,
    /// Reset region A; the gripper returns to the environment start pose,
    /// which must lie inside it.
    pub region_a: Rect,
}

impl Default for TrialPlan {
    fn default() -> Self {
        let cycle = [(1, 2), (2, 3), (3, 1)];
        let legs = (0..3)
            .flat_map(|_| cycle.iter().map(|&(from_slot, to_slot)| Leg { from_slot, to_slot }))
            .collect();
        Self { legs, region_a: Rect::new(-20.0, 20.0, -60.0, -40.0) }
    }
}

impl TrialPlan {
    pub fn validate(&self, env: &PegEnv) -> Result<(), ArbiterError> {
        let bad = |m: String| Err(ArbiterError::InvalidPlan(m));
        if self.legs.is_empty() {
            return bad("no legs".into());
        }
        let cfg = env.config();
        for (i, leg) in self.legs.iter().enumerate() {
            for id in [leg.from_slot, leg.to_slot] {
                if cfg.slot(id).is_none() {
                    return bad(format!("leg {} references unknown slot {id}", i + 1));
                }
            }
            if leg.from_slot == leg.to_slot {
                return bad(format!("leg {} starts and ends at slot {}", i + 1, leg.from_slot));
            }
            if i > 0 && self.legs[i - 1].to_slot != leg.from_slot {
                return bad(format!("leg {} does not start where leg {i} ended", i + 1));
            }
        }
        if !self.region_a.contains(cfg.start.x, cfg.start.y) {
            return bad("start pose lies outside region A".into());
        }
        Ok(())
    }
}

/// One operator device sample: a pose delta plus the clutch and resume
/// buttons. `seq` is assigned by the transport and echoed back to clients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorInput {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub droll: f64,
    pub clutch: bool,
    pub resume: bool,
    pub timestamp_ms: f64,
    pub seq: u64,
}

impl OperatorInput {
    pub fn motion(dx: f64, dy: f64, dz: f64, droll: f64, clutch: bool) -> Self {
        Self { dx, dy, dz, droll, clutch, ..Self::default() }
    }

    pub fn resume() -> Self {
        Self { resume: true, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        [self.dx, self.dy, self.dz, self.droll, self.timestamp_ms].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArbiterConfig {
    pub deadband_mm: f64,
    pub deadband_rad: f64,
    /// Per-input caps; larger deltas are clamped.
    pub max_translation_mm: f64,
    pub max_roll_rad: f64,
    /// Release distance from the to-slot that counts as a placement.
    pub place_radius_mm: f64,
}

impl Default for ArbiterConfig {
    fn default() -> Self {
        Self { deadband_mm: 0.1, deadband_rad: 0.001, max_translation_mm: 5.0, max_roll_rad: 0.2, place_radius_mm: 5.0 }
    }
}

impl ArbiterConfig {
    pub fn validate(&self) -> Result<(), ArbiterError> {
        let vals = [self.deadband_mm, self.deadband_rad, self.max_translation_mm, self.max_roll_rad, self.place_radius_mm];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ArbiterError::InvalidConfig("values must be finite and non-negative".into()));
        }
        if self.max_translation_mm <= self.deadband_mm || self.max_roll_rad <= self.deadband_rad {
            return Err(ArbiterError::InvalidConfig("caps must exceed the deadband".into()));
        }
        Ok(())
    }

    pub fn is_motion(&self, input: &OperatorInput) -> bool {
        [input.dx, input.dy, input.dz].iter().any(|v| v.abs() > self.deadband_mm) || input.droll.abs() > self.deadband_rad
    }

    fn capped(&self, input: &OperatorInput) -> OperatorInput {
        let t = self.max_translation_mm;
        let r = self.max_roll_rad;
        OperatorInput {
            dx: input.dx.clamp(-t, t),
            dy: input.dy.clamp(-t, t),
            dz: input.dz.clamp(-t, t),
            droll: input.droll.clamp(-r, r),
            ..*input
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ArbiterEvent {
    PhaseChanged { from: ControlPhase, to: ControlPhase },
    /// The agent finished its coarse approach (or ran out of steps).
    Handover { timeout: bool },
    Override,
    Resume,
    Grasp { peg: usize },
    GraspMissed,
    Release { peg: usize, slot: Option<u32> },
    LegComplete { leg: usize, from_slot: u32, to_slot: u32 },
    InputDropped { reason: String },
}

impl ArbiterEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ArbiterEvent::PhaseChanged { .. } => "phase_changed",
            ArbiterEvent::Handover { .. } => "handover",
            ArbiterEvent::Override => "override",
            ArbiterEvent::Resume => "resume",
            ArbiterEvent::Grasp { .. } => "grasp",
            ArbiterEvent::GraspMissed => "grasp_missed",
            ArbiterEvent::Release { .. } => "release",
            ArbiterEvent::LegComplete { .. } => "leg_complete",
            ArbiterEvent::InputDropped { .. } => "input_dropped",
        }
    }

    /// `tick\tkind\tpayload` with a JSON payload.
    pub fn log_line(&self, tick: u64) -> String {
        let payload = serde_json::to_value(self).unwrap_or_default();
        let payload = match payload {
            serde_json::Value::Object(mut m) => {
                m.remove("event");
                serde_json::Value::Object(m)
            }
            v => v,
        };
        format!("{tick}\t{}\t{payload}", self.kind())
    }
}

pub struct Arbiter {
    env: PegEnv,
    plan: TrialPlan,
    config: ArbiterConfig,
    scene: SceneState,
    leg: usize,
    placements: usize,
    tick: u64,
    queue: VecDeque<OperatorInput>,
    device: [f64; 3],
    last_seq: u64,
    applied_this_tick: bool,
    agent_needs_begin: bool,
}

impl Arbiter {
    pub fn new(env: PegEnv, plan: TrialPlan, config: ArbiterConfig, mut scene: SceneState) -> Result<Self, ArbiterError> {
        plan.validate(&env)?;
        config.validate()?;
        scene.phase = ControlPhase::AutoCoarse;
        Ok(Self {
            env,
            plan,
            config,
            scene,
            leg: 0,
            placements: 0,
            tick: 0,
            queue: VecDeque::new(),
            device: [0.0; 3],
            last_seq: 0,
            applied_this_tick: false,
            agent_needs_begin: true,
        })
    }

    pub fn phase(&self) -> ControlPhase {
        self.scene.phase
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn env(&self) -> &PegEnv {
        &self.env
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn config(&self) -> &ArbiterConfig {
        &self.config
    }

    /// Index of the leg in progress (equals the number completed).
    pub fn leg_index(&self) -> usize {
        self.leg
    }

    pub fn current_leg(&self) -> Option<Leg> {
        self.plan.legs.get(self.leg).copied()
    }

    pub fn placements(&self) -> usize {
        self.placements
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Accumulated operator device position (sum of applied deltas).
    pub fn device_position(&self) -> [f64; 3] {
        self.device
    }

    /// Sequence number of the last input taken off the queue.
    pub fn last_input_seq(&self) -> u64 {
        self.last_seq
    }

    /// True if an operator input moved the gripper during the last tick.
    pub fn applied_this_tick(&self) -> bool {
        self.applied_this_tick
    }

    pub fn pending_inputs(&self) -> usize {
        self.queue.len()
    }

    /// Queues an input for the next tick; arrival order is preserved.
    pub fn submit(&mut self, input: OperatorInput) {
        self.queue.push_back(input);
    }

    fn transition(&mut self, to: ControlPhase, events: &mut Vec<ArbiterEvent>) {
        let from = self.scene.phase;
        debug_assert!(from.can_transition_to(to), "illegal transition {from:?} -> {to:?}");
        self.scene.phase = to;
        if to == ControlPhase::AutoCoarse {
            self.agent_needs_begin = true;
        }
        events.push(ArbiterEvent::PhaseChanged { from, to });
    }

    fn drop_input(&self, reason: &str, events: &mut Vec<ArbiterEvent>) {
        log::warn!("dropping operator input at tick {}: {reason}", self.tick);
        events.push(ArbiterEvent::InputDropped { reason: reason.to_string() });
    }

    /// Applies one input under the override and resume rules.
    pub fn on_operator_input(&mut self, input: OperatorInput, events: &mut Vec<ArbiterEvent>) -> ControlPhase {
        self.last_seq = self.last_seq.max(input.seq);
        if !input.is_finite() {
            self.drop_input("non-finite values", events);
            return self.phase();
        }
        match self.phase() {
            ControlPhase::AutoCoarse => {
                if self.config.is_motion(&input) {
                    events.push(ArbiterEvent::Override);
                    self.transition(ControlPhase::ManualPrecision, events);
                    self.apply_manual(&input, events);
                }
            }
            ControlPhase::ManualPrecision => {
                if input.resume {
                    if self.scene.held_peg.is_some() || self.scene.jaws_closed {
                        self.drop_input("resume ignored while the jaws are closed", events);
                    } else {
                        events.push(ArbiterEvent::Resume);
                        self.transition(ControlPhase::AutoCoarse, events);
                    }
                } else {
                    self.apply_manual(&input, events);
                }
            }
            ControlPhase::Resetting => self.drop_input("gripper is resetting", events),
            ControlPhase::TrialComplete => self.drop_input("trial is complete", events),
        }
        self.phase()
    }

    fn apply_manual(&mut self, input: &OperatorInput, events: &mut Vec<ArbiterEvent>) {
        let inp = self.config.capped(input);
        let before = self.scene.clone();
        let mut next = self.env.manual_step(&self.scene, inp.dx, inp.dy, inp.dz, inp.droll, inp.clutch);
        // The arbiter owns the per-leg step counter; manual motion does not advance it.
        next.tick = before.tick;
        self.device[0] += inp.dx;
        self.device[1] += inp.dy;
        self.device[2] += inp.dz;
        self.applied_this_tick = true;
        self.scene = next;

        if !before.jaws_closed && self.scene.jaws_closed {
            match self.scene.held_peg {
                Some(peg) => events.push(ArbiterEvent::Grasp { peg }),
                None => events.push(ArbiterEvent::GraspMissed),
            }
        }
        if let (Some(peg), None) = (before.held_peg, self.scene.held_peg) {
            let slot = self.scene.pegs[peg].slot;
            events.push(ArbiterEvent::Release { peg, slot });
            self.check_placement(peg, events);
        }
    }

    fn check_placement(&mut self, peg: usize, events: &mut Vec<ArbiterEvent>) {
        let Some(leg) = self.current_leg() else { return };
        if peg != self.scene.target_index {
            return;
        }
        let Some(slot) = self.env.config().slot(leg.to_slot) else { return };
        let p = &self.scene.pegs[peg];
        if (p.x - slot.x).hypot(p.y - slot.y) > self.config.place_radius_mm {
            return;
        }
        self.placements += 1;
        events.push(ArbiterEvent::LegComplete { leg: self.leg, from_slot: leg.from_slot, to_slot: leg.to_slot });
        self.leg += 1;
        if self.leg >= self.plan.legs.len() {
            self.transition(ControlPhase::TrialComplete, events);
        } else {
            self.transition(ControlPhase::Resetting, events);
        }
    }

    /// One simulation tick: drain the input queue, then let the agent move if
    /// control is still autonomous.
    pub fn tick(&mut self, agent: &mut dyn CoarsePolicy) -> Vec<ArbiterEvent> {
        let mut events = Vec::new();
        self.tick += 1;
        self.applied_this_tick = false;

        if self.phase() == ControlPhase::Resetting {
            // Inputs that arrived during the reset belong to no leg.
            while let Some(input) = self.queue.pop_front() {
                self.last_seq = self.last_seq.max(input.seq);
                self.drop_input("gripper is resetting", &mut events);
            }
            self.scene = self.env.teleport_to_start(&self.scene);
            self.transition(ControlPhase::AutoCoarse, &mut events);
            return events;
        }

        while let Some(input) = self.queue.pop_front() {
            self.on_operator_input(input, &mut events);
        }

        if self.phase() == ControlPhase::AutoCoarse && !self.applied_this_tick {
            self.auto_step(agent, &mut events);
        }
        events
    }

    fn auto_step(&mut self, agent: &mut dyn CoarsePolicy, events: &mut Vec<ArbiterEvent>) {
        if self.agent_needs_begin {
            agent.begin(&self.scene);
            self.agent_needs_begin = false;
        }
        let Some(action) = agent.act(&self.scene) else { return };
        match self.env.step(&self.scene, action) {
            Ok(out) => {
                self.scene = out.next_state;
                match out.terminal_reason {
                    TerminalReason::None => {}
                    reason => {
                        events.push(ArbiterEvent::Handover { timeout: reason == TerminalReason::MaxSteps });
                        self.transition(ControlPhase::ManualPrecision, events);
                    }
                }
            }
            Err(e) => log::warn!("coarse step rejected: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_env::EnvConfig;

    fn arbiter() -> Arbiter {
        let env = PegEnv::new(EnvConfig::default()).unwrap();
        let scene = env.reset_at_slot(0, 1, 0.0, (0.0, 0.0)).unwrap();
        Arbiter::new(env, TrialPlan::default(), ArbiterConfig::default(), scene).unwrap()
    }

    /// Replays a fixed action list.
    struct Script(Vec<Action>, usize);

    impl CoarsePolicy for Script {
        fn begin(&mut self, _scene: &SceneState) {}
        fn act(&mut self, _scene: &SceneState) -> Option<Action> {
            let a = self.0.get(self.1).copied();
            self.1 += 1;
            a
        }
    }

    #[test]
    fn default_plan_cycles_three_slots() {
        let p = TrialPlan::default();
        assert_eq!(p.legs.len(), 9);
        let pairs: Vec<_> = p.legs.iter().map(|l| (l.from_slot, l.to_slot)).collect();
        assert_eq!(&pairs[..3], &[(1, 2), (2, 3), (3, 1)]);
        assert_eq!(&pairs[..3], &pairs[6..]);
    }

    #[test]
    fn plan_validation() {
        let env = PegEnv::new(EnvConfig::default()).unwrap();
        assert!(TrialPlan { legs: vec![], ..TrialPlan::default() }.validate(&env).is_err());
        let bad = TrialPlan { legs: vec![Leg { from_slot: 1, to_slot: 9 }], ..TrialPlan::default() };
        assert!(bad.validate(&env).is_err());
    }

    #[test]
    fn motion_overrides_in_same_tick() {
        let mut a = arbiter();
        let x0 = a.scene().gripper.x;
        a.submit(OperatorInput::motion(1.0, 0.0, 0.0, 0.0, false));
        let ev = a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::ManualPrecision);
        assert_eq!(a.scene().gripper.x, x0 + 1.0);
        assert!(ev.contains(&ArbiterEvent::Override));
    }

    #[test]
    fn clutch_only_is_ignored_in_auto() {
        let mut a = arbiter();
        a.submit(OperatorInput::motion(0.0, 0.0, 0.0, 0.0, true));
        a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::AutoCoarse);
        assert!(!a.scene().jaws_closed);
    }

    #[test]
    fn deadband_filters_noise() {
        let mut a = arbiter();
        a.submit(OperatorInput::motion(0.05, -0.05, 0.0, 0.0005, false));
        a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::AutoCoarse);
    }

    #[test]
    fn resume_returns_to_auto() {
        let mut a = arbiter();
        a.submit(OperatorInput::motion(1.0, 0.0, 0.0, 0.0, false));
        a.tick(&mut IdlePolicy);
        a.submit(OperatorInput::resume());
        let ev = a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::AutoCoarse);
        assert!(ev.contains(&ArbiterEvent::Resume));
    }

    #[test]
    fn inputs_are_capped() {
        let mut a = arbiter();
        let x0 = a.scene().gripper.x;
        a.submit(OperatorInput::motion(50.0, 0.0, 0.0, 0.0, false));
        a.tick(&mut IdlePolicy);
        assert_eq!(a.scene().gripper.x, x0 + 5.0);
        assert_eq!(a.device_position()[0], 5.0);
    }

    #[test]
    fn non_finite_input_dropped() {
        let mut a = arbiter();
        a.submit(OperatorInput::motion(f64::NAN, 0.0, 0.0, 0.0, false));
        let ev = a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::AutoCoarse);
        assert!(matches!(ev[0], ArbiterEvent::InputDropped { .. }));
    }

    #[test]
    fn handover_on_reaching_target() {
        let mut a = arbiter();
        // Slot 1 is at (-25, 35) from a start of (0, -50); approaching from
        // below, the gripper must turn to -90°.
        let mut plan = vec![Action::from_levels(-1, 1, -1).unwrap(); 4];
        plan.extend(vec![Action::from_levels(0, 1, -1).unwrap(); 5]);
        plan.extend(vec![Action::from_levels(0, 1, 0).unwrap(); 15]);
        let mut agent = Script(plan, 0);
        let mut handed_over = false;
        for _ in 0..24 {
            let ev = a.tick(&mut agent);
            if ev.contains(&ArbiterEvent::Handover { timeout: false }) {
                handed_over = true;
                break;
            }
        }
        assert!(handed_over);
        assert_eq!(a.phase(), ControlPhase::ManualPrecision);
        assert!(a.scene().distance_to_target() <= 10.0);
    }

    #[test]
    fn placement_at_to_slot_completes_leg() {
        let mut a = arbiter();
        let slot2 = *a.env().config().slot(2).unwrap();
        // Put the gripper on the peg and grasp.
        let t = a.scene().target().clone();
        let g = a.scene().gripper;
        a.submit(OperatorInput::motion(0.0, 0.0, 0.0, 0.01, false));
        a.tick(&mut IdlePolicy);
        a.scene.gripper = crate::sim_env::Pose { x: t.x, y: t.y - 2.0, ..g };
        a.scene.gripper.roll = a.scene.desired_roll();
        a.submit(OperatorInput::motion(0.0, 0.0, 0.0, 0.0, true));
        let ev = a.tick(&mut IdlePolicy);
        assert!(ev.contains(&ArbiterEvent::Grasp { peg: 0 }), "{ev:?}");
        a.scene.gripper.x = slot2.x - 1.0;
        a.scene.gripper.y = slot2.y;
        a.submit(OperatorInput::motion(1.0, 0.0, 0.0, 0.0, true));
        a.submit(OperatorInput::motion(0.0, 0.0, 0.0, 0.0, false));
        let ev = a.tick(&mut IdlePolicy);
        assert!(ev.contains(&ArbiterEvent::LegComplete { leg: 0, from_slot: 1, to_slot: 2 }), "{ev:?}");
        assert_eq!(a.phase(), ControlPhase::Resetting);
        assert_eq!(a.leg_index(), 1);
        a.tick(&mut IdlePolicy);
        assert_eq!(a.phase(), ControlPhase::AutoCoarse);
        assert_eq!((a.scene().gripper.x, a.scene().gripper.y), (0.0, -50.0));
    }

    #[test]
    fn legal_transition_table() {
        use ControlPhase::*;
        let all = [AutoCoarse, ManualPrecision, Resetting, TrialComplete];
        let legal: Vec<_> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a.can_transition_to(b))
            .collect();
        assert_eq!(legal.len(), 7);
        assert!(!TrialComplete.can_transition_to(AutoCoarse));
        assert!(!Resetting.can_transition_to(ManualPrecision));
    }

    #[test]
    fn event_log_line_format() {
        let line = ArbiterEvent::Grasp { peg: 0 }.log_line(12);
        assert_eq!(line, "12\tgrasp\t{\"peg\":0}");
    }
}
