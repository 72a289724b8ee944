//! Parameter updates: Adam (the default) and plain SGD.

use serde::{Deserialize, Serialize};

use super::model::{Grads, RNModel};
use super::tensor::TensorGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<TensorGrid>,
    v: Vec<TensorGrid>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, model: &RNModel) -> Self {
        let zeros: Vec<TensorGrid> = model
            .params()
            .iter()
            .map(|t| TensorGrid::zeros(&t.shape))
            .collect();
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut RNModel, grads: &Grads) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in model.params_mut().into_iter().zip(&grads.tensors) {
                    for (w, &gv) in p.data.iter_mut().zip(&g.data) {
                        *w -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1t = 1.0 - self.beta1.powi(self.t as i32);
                let b2t = 1.0 - self.beta2.powi(self.t as i32);
                for ((p, g), (m, v)) in model
                    .params_mut()
                    .into_iter()
                    .zip(&grads.tensors)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for i in 0..p.data.len() {
                        let gv = g.data[i];
                        m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gv;
                        v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gv * gv;
                        let mhat = m.data[i] / b1t;
                        let vhat = v.data[i] / b2t;
                        p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
