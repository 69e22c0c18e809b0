use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Update rule and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    },
    Sgd {
        lr: f32,
        momentum: f32,
    },
}

impl Optimizer {
    /// Adam with the PPI settings: lr 0.005, no weight decay.
    pub fn adam(lr: f32) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn lr(&self) -> f32 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr, .. } => lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub seed: u64,
    /// Clouds per minibatch for point-cloud training; graphs are always one per step.
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        match self.optimizer {
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::validation("adam betas must lie in [0, 1)"));
                }
                if !(eps > 0.0) || !(weight_decay >= 0.0) {
                    return Err(Error::validation(
                        "adam eps must be > 0 and weight decay >= 0",
                    ));
                }
            }
            Optimizer::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::validation("sgd momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Moment buffers for one list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    optimizer: Optimizer,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimState {
    pub fn new(optimizer: Optimizer, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        OptimState {
            optimizer,
            step: 0,
            first: zeros(),
            second: match optimizer {
                Optimizer::Adam { .. } => zeros(),
                Optimizer::Sgd { .. } => Vec::new(),
            },
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First-moment buffers (Adam) or velocities (SGD).
    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.second
    }

    /// Applies one update. Fails without touching anything when a gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors but got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at element {i} of parameter tensor {k} (step {})",
                    g.data()[i],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        match self.optimizer {
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let (b1, b2) = (beta1 as f64, beta2 as f64);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gi = gi as f64 + weight_decay as f64 * *w as f64;
                        let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                        let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let update = lr as f64 * (mi / c1) / ((vi / c2).sqrt() + eps as f64);
                        *w = (*w as f64 - update) as f32;
                    }
                }
            }
            Optimizer::Sgd { lr, momentum } => {
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let vel = &mut self.first[k];
                    for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut())
                    {
                        *vi = momentum * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
        }
        Ok(())
    }
}
