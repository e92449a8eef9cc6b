use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::backward::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Plain SGD or Adam with the usual defaults.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    m: Gradients<T>,
    v: Gradients<T>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, shapes: &[Vec<T>]) -> Self {
        let zeros = || -> Gradients<T> {
            match kind {
                OptimizerKind::Adam => shapes.iter().map(|w| vec![T::zero(); w.len()]).collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self { kind, m: zeros(), v: zeros(), steps: 0 }
    }

    pub fn step(&mut self, weights: &mut [Vec<T>], grads: &Gradients<T>, lr: f64) {
        let lr = T::lit(lr);
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in weights.iter_mut().zip(grads) {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi = *wi - lr * *gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::lit(ADAM_BETA1);
                let b2 = T::lit(ADAM_BETA2);
                let eps = T::lit(ADAM_EPS);
                let c1 = T::one() - b1.powi(self.steps);
                let c2 = T::one() - b2.powi(self.steps);
                let (a1, a2) = (T::one() - b1, T::one() - b2);
                for (((w, g), m), v) in weights.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for (((wi, &gi), mi), vi) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + a1 * gi;
                        *vi = b2 * *vi + a2 * gi * gi;
                        let mh = *mi / c1;
                        let vh = *vi / c2;
                        *wi = *wi - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}
