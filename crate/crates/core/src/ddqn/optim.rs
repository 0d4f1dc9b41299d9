use serde::{Deserialize, Serialize};

use super::network::{cast, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent; `momentum = 0` gives `θ ← θ − lr·g`.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer<F: Scalar> {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<F>,
    second: Vec<F>,
    steps: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![F::zero(); param_count],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self { kind, learning_rate, first: vec![F::zero(); param_count], second, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        debug_assert_eq!(params.len(), grad.len());
        self.steps += 1;
        let lr: F = cast(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                if momentum == 0.0 {
                    for (p, g) in params.iter_mut().zip(grad) {
                        *p -= lr * *g;
                    }
                } else {
                    let mu: F = cast(momentum);
                    for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                        *v = mu * *v + *g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = self.steps as i32;
                let (b1, b2): (F, F) = (cast(beta1), cast(beta2));
                let c1: F = cast(1.0 - beta1.powi(t));
                let c2: F = cast(1.0 - beta2.powi(t));
                let eps: F = cast(epsilon);
                let one = F::one();
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = b1 * *m + (one - b1) * *g;
                    *v = b2 * *v + (one - b2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_moves_against_gradient() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::sgd(), 0.1, 2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[2.0, -4.0]);
        assert_eq!(p, vec![0.8, -0.6]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Sgd { momentum: 0.5 }, 1.0, 1);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]);
        opt.step(&mut p, &[1.0]);
        assert_eq!(p, vec![-2.5]);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::default(), 1e-3, 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.01]);
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_sgd_params() {
        let mut opt = Optimizer::<f32>::new(OptimizerKind::sgd(), 0.5, 3);
        let mut p = vec![0.25f32, 1.0, -2.0];
        opt.step(&mut p, &[0.0, 0.0, 0.0]);
        assert_eq!(p, vec![0.25, 1.0, -2.0]);
    }
}
