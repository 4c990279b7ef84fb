use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::networks::ParamSet;

/// First-moment decay of the optimizer.
pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet<f32>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.tensors().map(|t| ArrayD::zeros(t.raw_dim())).collect::<Vec<_>>();
        Adam {
            beta1,
            beta2,
            epsilon,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one bias-corrected update with learning rate `lr`.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &[ArrayD<f32>], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let step_size = (lr * correction2.sqrt() / correction1) as f32;
        let eps = (self.epsilon * correction2.sqrt()) as f32;
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            });
        }
    }
}
