use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax, cast, QNetwork, Scalar, Topology};
use super::optim::{Optimizer, OptimizerKind};
use super::NetError;
use crate::renderer::Observation;
use crate::sim_env::Layout;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    /// Squared inside `|e| ≤ delta`, linear outside, continuous slope.
    Huber { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationKind {
    Features,
    /// Stacked square frames of `resolution` pixels per side.
    Frames { resolution: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay_steps: u64,
    pub target_sync_period: u64,
    pub max_episodes: usize,
    pub seed: u64,
    pub observation: ObservationKind,
    /// Hidden widths of the feature-mode network.
    pub hidden: Vec<usize>,
    pub layout: Layout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            loss: LossKind::Squared,
            batch_size: 32,
            replay_capacity: 10_000,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_decay_steps: 20_000,
            target_sync_period: 500,
            max_episodes: 500,
            seed: 0,
            observation: ObservationKind::Features,
            hidden: vec![64, 64],
            layout: Layout::RandomUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("requires 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("requires 0 < batch_size <= replay_capacity");
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be positive");
        }
        if let LossKind::Huber { delta } = self.loss {
            if delta <= 0.0 {
                return bad("huber delta must be positive");
            }
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` at step 0 to `epsilon_min` at
/// `epsilon_decay_steps`, constant afterwards.
pub fn epsilon_at(step: u64, config: &TrainConfig) -> f64 {
    if step >= config.epsilon_decay_steps {
        return config.epsilon_min;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    config.epsilon_start + (config.epsilon_min - config.epsilon_start) * frac
}

/// ε-greedy: uniform with probability `epsilon`, else the lowest-index argmax.
pub fn select_action<F: Scalar, R: Rng>(net: &QNetwork<F>, input: &[F], epsilon: f64, rng: &mut R) -> Result<usize, NetError> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..net.output_width()));
    }
    Ok(argmax(&net.forward(input)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: usize,
    pub r: f32,
    pub s_next: Observation,
    /// True only for genuine terminal states; time-limit cut-offs bootstrap.
    pub terminal: bool,
}

/// `Q_θ′(s′, argmax_a Q_θ(s′, a))`: the online net picks, the target net scores.
pub fn double_q_value<F: Scalar>(online: &QNetwork<F>, target: &QNetwork<F>, next_input: &[F]) -> Result<F, NetError> {
    let pick = argmax(&online.forward(next_input)?);
    Ok(target.forward(next_input)?[pick])
}

pub fn double_q_target_raw<F: Scalar>(
    reward: F,
    terminal: bool,
    next_input: &[F],
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    gamma: F,
) -> Result<F, NetError> {
    if terminal {
        return Ok(reward);
    }
    Ok(reward + gamma * double_q_value(online, target, next_input)?)
}

pub fn double_q_target(t: &Transition, online: &QNetwork<f32>, target: &QNetwork<f32>, gamma: f32) -> Result<f32, NetError> {
    if t.terminal {
        return Ok(t.r);
    }
    double_q_target_raw(t.r, false, &t.s_next.to_input(), online, target, gamma)
}

/// One regression example: pull `Q(input, action)` toward a fixed `target`.
#[derive(Clone, Debug)]
pub struct Regression<'a, F> {
    pub input: &'a [F],
    pub action: usize,
    pub target: F,
}

fn loss_term<F: Scalar>(err: F, kind: LossKind) -> (F, F) {
    let two = cast::<F>(2.0);
    match kind {
        LossKind::Squared => (err * err, two * err),
        LossKind::Huber { delta } => {
            let d: F = cast(delta);
            if err.abs() <= d {
                (err * err, two * err)
            } else {
                (two * d * err.abs() - d * d, two * d * err.signum())
            }
        }
    }
}

/// Mean loss over `samples` and its gradient with respect to every parameter.
/// Targets are constants: no gradient flows through them.
pub fn loss_and_gradient<F: Scalar>(net: &QNetwork<F>, samples: &[Regression<'_, F>], kind: LossKind) -> Result<(F, Vec<F>), NetError> {
    if samples.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let n: F = cast(samples.len() as f64);
    let mut grad = vec![F::zero(); net.param_count()];
    let mut total = F::zero();
    let mut d_out = vec![F::zero(); net.output_width()];
    for s in samples {
        if s.action >= net.output_width() {
            return Err(NetError::InvalidAction(s.action));
        }
        let trace = net.forward_trace(s.input)?;
        let (l, dl) = loss_term(trace.output()[s.action] - s.target, kind);
        total += l;
        d_out.iter_mut().for_each(|v| *v = F::zero());
        d_out[s.action] = dl / n;
        net.backward(&trace, &d_out, &mut grad)?;
    }
    Ok((total / n, grad))
}

/// Online network, target network and optimizer state.
#[derive(Clone, Debug)]
pub struct DoubleDqn {
    online: QNetwork<f32>,
    target: QNetwork<f32>,
    optimizer: Optimizer<f32>,
    gamma: f32,
    loss: LossKind,
}

impl DoubleDqn {
    /// Online and target parameters get independent seeded initializations;
    /// they only coincide after [`DoubleDqn::sync_target`].
    pub fn new(topology: Topology, config: &TrainConfig, seed: u64) -> Result<Self, NetError> {
        let online = QNetwork::seeded(topology.clone(), seed)?;
        let target = QNetwork::seeded(topology, seed ^ 0x5eed_7a26_e700_0001)?;
        Self::from_networks(online, target, config)
    }

    pub fn from_networks(online: QNetwork<f32>, target: QNetwork<f32>, config: &TrainConfig) -> Result<Self, NetError> {
        config.validate()?;
        if online.topology() != target.topology() {
            return Err(NetError::ShapeMismatch { expected: online.param_count(), got: target.param_count() });
        }
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, online.param_count());
        Ok(Self { online, target, optimizer, gamma: config.gamma as f32, loss: config.loss })
    }

    pub fn online(&self) -> &QNetwork<f32> {
        &self.online
    }

    pub fn target(&self) -> &QNetwork<f32> {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut QNetwork<f32> {
        &mut self.online
    }

    pub fn into_networks(self) -> (QNetwork<f32>, QNetwork<f32>) {
        (self.online, self.target)
    }

    pub fn double_q_target(&self, t: &Transition) -> Result<f32, NetError> {
        double_q_target(t, &self.online, &self.target, self.gamma)
    }

    /// θ′ := θ.
    pub fn sync_target(&mut self) -> Result<(), NetError> {
        self.target.copy_from(&self.online)
    }

    /// One optimizer update of θ toward the double-Q targets; returns the
    /// loss measured before the update. θ′ is left untouched.
    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<f32, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let inputs: Vec<Vec<f32>> = batch.iter().map(|t| t.s.to_input()).collect();
        let mut samples = Vec::with_capacity(batch.len());
        for (t, input) in batch.iter().zip(&inputs) {
            samples.push(Regression { input, action: t.a, target: self.double_q_target(t)? });
        }
        let (loss, grad) = loss_and_gradient(&self.online, &samples, self.loss)?;
        self.optimizer.step(self.online.params_mut(), &grad);
        if !loss.is_finite() || !self.online.is_finite() {
            return Err(NetError::NonFinite);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ddqn::network::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Network with constant outputs `values` regardless of input.
    fn constant(values: &[f32]) -> QNetwork<f32> {
        let topo = Topology::mlp(1, &[], values.len());
        let mut params = vec![0.0; values.len()];
        params.extend_from_slice(values);
        QNetwork::from_params(topo, params).unwrap()
    }

    fn feat(v: f32) -> Observation {
        Observation::Features(Arc::from(vec![v].as_slice()))
    }

    fn transition(r: f32, terminal: bool) -> Transition {
        Transition { s: feat(0.0), a: 0, r, s_next: feat(1.0), terminal }
    }

    #[test]
    fn decoupled_target_uses_online_argmax() {
        let online = constant(&[1.0, 2.0]);
        let target = constant(&[5.0, 1.0]);
        let y = double_q_target(&transition(0.5, false), &online, &target, 0.95).unwrap();
        assert!((y - 1.45).abs() < 1e-6);
        let vanilla = 0.5 + 0.95 * 5.0;
        assert!((y - vanilla).abs() > 3.0);
    }

    #[test]
    fn terminal_target_is_reward() {
        let online = constant(&[1.0, 2.0]);
        let target = constant(&[5.0, 1.0]);
        assert_eq!(double_q_target(&transition(2.0, true), &online, &target, 0.95).unwrap(), 2.0);
    }

    #[test]
    fn coinciding_networks_reduce_to_max() {
        let net = constant(&[0.5, 3.0, -1.0]);
        let y = double_q_target(&transition(1.0, false), &net, &net.clone(), 0.9).unwrap();
        assert!((y - (1.0 + 0.9 * 3.0)).abs() < 1e-6);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig { epsilon_start: 1.0, epsilon_min: 0.0, epsilon_decay_steps: 100, ..TrainConfig::default() };
        assert_eq!(epsilon_at(0, &cfg), 1.0);
        assert_eq!(epsilon_at(50, &cfg), 0.5);
        assert_eq!(epsilon_at(100, &cfg), 0.0);
        assert_eq!(epsilon_at(10_000, &cfg), 0.0);
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut values = vec![0.0; 27];
        values[5] = 1.0;
        assert_eq!(select_action(&constant(&values), &[0.0], 0.0, &mut rng).unwrap(), 5);
        let mut values = vec![0.0; 27];
        values[2] = 1.0;
        values[9] = 1.0;
        assert_eq!(select_action(&constant(&values), &[0.0], 0.0, &mut rng).unwrap(), 2);
    }

    #[test]
    fn random_selection_is_seeded() {
        let net = constant(&[0.0; 27]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| select_action(&net, &[0.0], 1.0, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert!(draw(4).iter().all(|&a| a < 27));
    }

    #[test]
    fn single_parameter_gradient_step() {
        // Q(x) = w·x with x = 2, w = 0.5, target 3: loss (1 − 3)² = 4,
        // dL/dw = 2·(1 − 3)·2 = −8, so w ← 0.5 + 0.1·8 = 1.3.
        let topo = Topology { input: super::super::InputShape::Flat(1), layers: vec![super::super::LayerSpec::Dense { width: 1, bias: false }] };
        let online = QNetwork::<f32>::from_params(topo.clone(), vec![0.5]).unwrap();
        let cfg = TrainConfig { optimizer: OptimizerKind::sgd(), learning_rate: 0.1, batch_size: 1, ..TrainConfig::default() };
        let mut dqn = DoubleDqn::from_networks(online.clone(), online, &cfg).unwrap();
        let t = Transition { s: feat(2.0), a: 0, r: 3.0, s_next: feat(0.0), terminal: true };
        let loss = dqn.train_step(&[&t]).unwrap();
        assert_eq!(loss, 4.0);
        assert!((dqn.online().params()[0] - 1.3).abs() < 1e-6);
    }

    #[test]
    fn fixed_point_has_zero_gradient() {
        let net = QNetwork::<f64>::seeded(Topology::mlp(3, &[5], 4), 1).unwrap();
        let x = [0.2, -0.4, 0.9];
        let q = net.forward(&x).unwrap();
        let samples: Vec<_> = (0..4).map(|a| Regression { input: &x[..], action: a, target: q[a] }).collect();
        let (loss, grad) = loss_and_gradient(&net, &samples, LossKind::Squared).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = TrainConfig::default();
        let mut dqn = DoubleDqn::new(Topology::mlp(1, &[], 27), &cfg, 0).unwrap();
        assert_eq!(dqn.train_step(&[]), Err(NetError::EmptyBatch));
    }

    #[test]
    fn sync_semantics() {
        let cfg = TrainConfig::default();
        let mut dqn = DoubleDqn::new(Topology::mlp(2, &[4], 27), &cfg, 7).unwrap();
        let init_target = dqn.target().clone();
        assert_ne!(dqn.target().params(), dqn.online().params());
        assert_eq!(dqn.target(), &init_target);
        dqn.sync_target().unwrap();
        let x = [0.3f32, -0.8];
        assert_eq!(dqn.online().forward(&x).unwrap(), dqn.target().forward(&x).unwrap());
        let snapshot = dqn.target().clone();
        dqn.sync_target().unwrap();
        assert_eq!(dqn.target(), &snapshot);
    }

    #[test]
    fn train_step_never_touches_target() {
        let cfg = TrainConfig::default();
        let mut dqn = DoubleDqn::new(Topology::mlp(1, &[8], 27), &cfg, 3).unwrap();
        let before: Vec<u32> = dqn.target().params().iter().map(|p| p.to_bits()).collect();
        let ts: Vec<_> = (0..8).map(|i| Transition { s: feat(i as f32), a: i % 27, r: 1.0, s_next: feat(0.5), terminal: i % 2 == 0 }).collect();
        let batch: Vec<_> = ts.iter().collect();
        for _ in 0..5 {
            assert!(dqn.train_step(&batch).unwrap() >= 0.0);
        }
        let after: Vec<u32> = dqn.target().params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn huber_matches_squared_inside_delta() {
        assert_eq!(loss_term(0.5f64, LossKind::Huber { delta: 1.0 }), loss_term(0.5, LossKind::Squared));
        let (l, g) = loss_term(3.0f64, LossKind::Huber { delta: 1.0 });
        assert_eq!((l, g), (5.0, 2.0));
    }
}
