use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(rename = "adamw")]
    AdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::AdamW];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 1e-2,
            OptimizerKind::Adam | OptimizerKind::AdamW => 1e-3,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Optimizer with its per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Decoupled decay, applied by AdamW only.
    pub weight_decay: f64,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            weight_decay,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update to every trainable parameter holding a gradient
    /// and returns the ids it touched. Fails before touching anything if a
    /// gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<Vec<ParamId>> {
        for (_, p) in store.trainable() {
            if let Some(g) = &p.grad {
                if !g.all_finite() {
                    return Err(Error::Numerical(format!("non-finite gradient for parameter `{}`", p.name)));
                }
            }
        }
        let ids: Vec<ParamId> = store
            .trainable()
            .filter(|(_, p)| p.grad.is_some())
            .map(|(id, _)| id)
            .collect();
        if self.first.len() < store.len() {
            self.first.resize(store.len(), Vec::new());
            self.second.resize(store.len(), Vec::new());
        }
        self.steps += 1;
        let t = self.steps as f64;
        for &id in &ids {
            let p = store.get_mut(id);
            let grad = p.grad.as_ref().expect("filtered on grad").data();
            let value = p.value.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in value.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let (m, v) = (&mut self.first[id.index()], &mut self.second[id.index()]);
                    if m.len() != value.len() {
                        *m = vec![0.0; value.len()];
                        *v = vec![0.0; value.len()];
                    }
                    if self.kind == OptimizerKind::AdamW {
                        let keep = 1.0 - lr * self.weight_decay;
                        for w in value.iter_mut() {
                            *w *= keep;
                        }
                    }
                    let c1 = 1.0 - BETA1.powf(t);
                    let c2 = 1.0 - BETA2.powf(t);
                    for i in 0..value.len() {
                        let g = grad[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        value[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
                    }
                }
            }
        }
        Ok(ids)
    }
}
