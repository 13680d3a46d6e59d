//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainGradient,
    AdaptiveMoment,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// One parameter group with its own learning rate and moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, len: usize) -> Self {
        let moments = match kind {
            OptimizerKind::PlainGradient => 0,
            OptimizerKind::AdaptiveMoment => len,
        };
        Self {
            kind,
            learning_rate,
            step: 0,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one descent step `params -= update(grads)`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut f64>, grads: &[f64]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::PlainGradient => {
                for (p, g) in params.into_iter().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, &g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gradient_step() {
        let mut x = vec![1.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::PlainGradient, 0.5, 2);
        opt.step(x.iter_mut(), &[2.0, -4.0]);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // bias correction makes the first update lr * g / |g|
        let mut x = vec![0.0, 0.0];
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 0.1, 2);
        opt.step(x.iter_mut(), &[3.0, -0.001]);
        assert!((x[0] + 0.1).abs() < 1e-6);
        assert!((x[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![5.0];
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 0.05, 1);
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 1.5);
            opt.step(x.iter_mut(), &[g]);
        }
        assert!((x[0] - 1.5).abs() < 1e-3);
    }
}
