//! Trial sessions: an arbiter plus the bookkeeping needed to score and replay
//! a run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arbiter, ArbiterConfig, ArbiterError, ArbiterEvent, CoarsePolicy, ControlPhase, OperatorInput, TrialPlan, VirtualOperator};
use crate::metrics::{Sample, TrialMode, TrialRecord};
use crate::sim_env::{PegEnv, SceneState};

/// Largest offset of the first peg from its slot centre, per axis.
const INITIAL_OFFSET_MM: f64 = 2.0;

/// The scene a trial starts from: the target peg near the first leg's slot
/// with a seeded orientation and offset.
pub fn initial_scene(env: &PegEnv, plan: &TrialPlan, seed: u64) -> Result<SceneState, ArbiterError> {
    plan.validate(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientation = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
    let ox = rng.gen_range(-INITIAL_OFFSET_MM..=INITIAL_OFFSET_MM);
    let oy = rng.gen_range(-INITIAL_OFFSET_MM..=INITIAL_OFFSET_MM);
    Ok(env.reset_at_slot(seed, plan.legs[0].from_slot, orientation, (ox, oy))?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    /// Inputs keyed by the tick that consumed them.
    pub inputs: Vec<(u64, OperatorInput)>,
    pub events: Vec<(u64, ArbiterEvent)>,
    pub ticks: u64,
}

pub struct TrialSession {
    arbiter: Arbiter,
    record: TrialRecord,
    tick_ms: f64,
    inputs: Vec<(u64, OperatorInput)>,
    events: Vec<(u64, ArbiterEvent)>,
}

impl TrialSession {
    pub fn new(
        env: PegEnv,
        plan: TrialPlan,
        config: ArbiterConfig,
        mode: TrialMode,
        seed: u64,
        tick_hz: f64,
    ) -> Result<Self, ArbiterError> {
        if !(tick_hz.is_finite() && tick_hz > 0.0) {
            return Err(ArbiterError::InvalidConfig(format!("tick rate must be positive, got {tick_hz}")));
        }
        let scene = initial_scene(&env, &plan, seed)?;
        let arbiter = Arbiter::new(env, plan, config, scene)?;
        let mut record = TrialRecord::new(mode);
        record.samples.push(Sample { t_ms: 0.0, x: 0.0, y: 0.0, z: 0.0, manual: false });
        Ok(Self { arbiter, record, tick_ms: 1000.0 / tick_hz, inputs: Vec::new(), events: Vec::new() })
    }

    pub fn arbiter(&self) -> &Arbiter {
        &self.arbiter
    }

    pub fn mode(&self) -> TrialMode {
        self.record.mode
    }

    pub fn tick_ms(&self) -> f64 {
        self.tick_ms
    }

    /// Simulated time of the next tick.
    pub fn next_tick_ms(&self) -> f64 {
        (self.arbiter.tick_count() + 1) as f64 * self.tick_ms
    }

    pub fn is_complete(&self) -> bool {
        self.arbiter.phase() == ControlPhase::TrialComplete
    }

    pub fn submit(&mut self, input: OperatorInput) {
        self.inputs.push((self.arbiter.tick_count() + 1, input));
        self.arbiter.submit(input);
    }

    pub fn tick(&mut self, agent: &mut dyn CoarsePolicy) -> Vec<ArbiterEvent> {
        let events = self.arbiter.tick(agent);
        let tick = self.arbiter.tick_count();
        let [x, y, z] = self.arbiter.device_position();
        let manual = self.arbiter.applied_this_tick() || self.arbiter.phase() == ControlPhase::ManualPrecision;
        self.record.samples.push(Sample { t_ms: tick as f64 * self.tick_ms, x, y, z, manual });
        for e in &events {
            if matches!(e, ArbiterEvent::LegComplete { .. }) {
                self.record.leg_markers.push(tick);
            }
            self.events.push((tick, e.clone()));
        }
        self.record.complete = self.is_complete();
        events
    }

    pub fn record(&self) -> &TrialRecord {
        &self.record
    }

    pub fn events(&self) -> &[(u64, ArbiterEvent)] {
        &self.events
    }

    pub fn finish(self) -> TrialOutcome {
        let ticks = self.arbiter.tick_count();
        TrialOutcome { record: self.record, inputs: self.inputs, events: self.events, ticks }
    }
}

/// Runs a whole trial with the virtual operator. In manual mode the operator
/// drives from the first tick of every leg; in semi-autonomous mode it waits
/// for the handover.
#[allow(clippy::too_many_arguments)]
pub fn run_scripted_trial(
    env: &PegEnv,
    plan: &TrialPlan,
    config: &ArbiterConfig,
    operator: &VirtualOperator,
    mode: TrialMode,
    seed: u64,
    agent: &mut dyn CoarsePolicy,
    tick_hz: f64,
    max_ticks: u64,
) -> Result<TrialOutcome, ArbiterError> {
    let mut session = TrialSession::new(env.clone(), plan.clone(), *config, mode, seed, tick_hz)?;
    while !session.is_complete() && session.arbiter().tick_count() < max_ticks {
        let arb = session.arbiter();
        let drive = match arb.phase() {
            ControlPhase::ManualPrecision => true,
            ControlPhase::AutoCoarse => mode == TrialMode::Manual,
            _ => false,
        };
        if drive {
            if let Some(leg) = arb.current_leg() {
                let mut input = operator.command(arb.scene(), &leg, env.config());
                input.timestamp_ms = session.next_tick_ms();
                session.submit(input);
            }
        }
        session.tick(agent);
    }
    Ok(session.finish())
}

/// Runs one scripted trial per seed in each mode; the agent only matters for
/// the semi-autonomous runs.
#[allow(clippy::too_many_arguments)]
pub fn compare_modes(
    env: &PegEnv,
    plan: &TrialPlan,
    config: &ArbiterConfig,
    operator: &VirtualOperator,
    agent: &mut dyn CoarsePolicy,
    seeds: &[u64],
    tick_hz: f64,
    max_ticks: u64,
) -> Result<(Vec<TrialOutcome>, Vec<TrialOutcome>), ArbiterError> {
    let mut manual = Vec::with_capacity(seeds.len());
    let mut semi = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        manual.push(run_scripted_trial(env, plan, config, operator, TrialMode::Manual, seed, &mut super::IdlePolicy, tick_hz, max_ticks)?);
        semi.push(run_scripted_trial(env, plan, config, operator, TrialMode::SemiAutonomous, seed, agent, tick_hz, max_ticks)?);
    }
    Ok((manual, semi))
}
