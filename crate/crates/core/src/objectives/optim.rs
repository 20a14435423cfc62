use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, GradientMap, ParamId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain SGD or Adam (β = 0.9, 0.999, ε = 1e-8) with a constant step size.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descends every parameter that has a gradient entry.
    pub fn step(&mut self, params: Vec<(ParamId, &mut Array)>, grads: &GradientMap) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (id, p) in params {
            let Some(g) = grads.get(&id) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "optimizer step",
                    shapes: format!("{id}: {:?} vs {:?}", p.shape(), g.shape()),
                });
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(id)
                        .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                    for (((w, gv), mi), vi) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gv;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gv * gv;
                        *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
