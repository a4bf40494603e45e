//! First-order optimizers over [`ModelParams`]. Both take gradients of a loss
//! to be minimized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u32,
        m: Box<ModelParams>,
        v: Box<ModelParams>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: Box::new(params.zeros_like()),
                v: Box::new(params.zeros_like()),
            },
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(-*lr, grads),
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut());
                for (((p, g), mt), vt) in tensors {
                    for k in 0..p.data.len() {
                        let gk = g.data[k];
                        mt.data[k] = *beta1 * mt.data[k] + (1.0 - *beta1) * gk;
                        vt.data[k] = *beta2 * vt.data[k] + (1.0 - *beta2) * gk * gk;
                        let mhat = mt.data[k] / c1;
                        let vhat = vt.data[k] / c2;
                        p.data[k] -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Numerical("parameters became non-finite".into()));
        }
        Ok(())
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
