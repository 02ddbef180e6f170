use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Element, LayerParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum {
        learning_rate: f64,
        momentum: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(1e-3)
    }
}

impl OptimizerKind {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerKind::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum {
            learning_rate,
            momentum,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerKind::SgdMomentum { learning_rate, .. } | OptimizerKind::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            OptimizerKind::SgdMomentum { learning_rate, .. } | OptimizerKind::Adam { learning_rate, .. } => {
                *learning_rate = lr
            }
        }
        self
    }

    /// A zero learning rate is accepted and makes every step a no-op.
    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        let ok = match *self {
            OptimizerKind::SgdMomentum { momentum, .. } => (0.0..1.0).contains(&momentum),
            OptimizerKind::Adam {
                beta1, beta2, epsilon, ..
            } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state, one slot per trainable tensor.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Element> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Optimizer {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Advances the step counter; call once per batch before the updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one tensor in place. Slots are stable indices chosen by the
    /// caller.
    pub fn update(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        if self.first.len() <= slot {
            self.first.resize(slot + 1, Vec::new());
            self.second.resize(slot + 1, Vec::new());
        }
        if self.first[slot].len() != param.len() {
            self.first[slot] = vec![T::zero(); param.len()];
            self.second[slot] = vec![T::zero(); param.len()];
        }
        match self.kind {
            OptimizerKind::SgdMomentum {
                learning_rate,
                momentum,
            } => {
                let lr = T::from_f64_lossy(learning_rate);
                let mu = T::from_f64_lossy(momentum);
                for ((p, &g), v) in param.iter_mut().zip(grad).zip(self.first[slot].iter_mut()) {
                    *v = mu * *v - lr * g;
                    *p += *v;
                }
            }
            OptimizerKind::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step.max(1) as i32;
                let lr_t = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                let (lr_t, b1, b2, eps) = (
                    T::from_f64_lossy(lr_t),
                    T::from_f64_lossy(beta1),
                    T::from_f64_lossy(beta2),
                    T::from_f64_lossy(epsilon),
                );
                let one = T::one();
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + eps);
                }
            }
        }
    }

    /// One optimizer step over every trainable tensor of `model`.
    pub fn step(&mut self, model: &mut Model<T>, grads: &[LayerParams<T>]) -> Result<()> {
        if grads.len() != model.params().len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                axis: "layers",
                expected: model.params().len(),
                actual: grads.len(),
            });
        }
        self.begin_step();
        let mut slot = 0;
        for (p, g) in model.params_mut().iter_mut().zip(grads) {
            let gs = g.tensors();
            for (name, tensor, trainable) in p.tensors_mut() {
                if !trainable {
                    continue;
                }
                let grad = gs
                    .iter()
                    .find(|r| r.name == name)
                    .ok_or_else(|| Error::invalid(format!("no gradient for {name}")))?;
                if grad.tensor.shape() != tensor.shape() {
                    return Err(Error::invalid(format!("gradient shape mismatch for {name}")));
                }
                self.update(slot, tensor.data_mut(), grad.tensor.data());
                slot += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimizes (x - 3)^2 from x = -2.
    fn converge(kind: OptimizerKind, steps: usize) -> f64 {
        let mut opt = Optimizer::<f64>::new(kind).unwrap();
        let mut x = [-2.0];
        for _ in 0..steps {
            let g = [2.0 * (x[0] - 3.0)];
            opt.begin_step();
            opt.update(0, &mut x, &g);
        }
        x[0]
    }

    #[test]
    fn quadratic_convergence() {
        let sgd = converge(OptimizerKind::sgd(0.1, 0.5), 200);
        assert!((sgd - 3.0).abs() < 1e-3, "sgd {sgd}");
        let adam = converge(OptimizerKind::adam(0.1), 200);
        assert!((adam - 3.0).abs() < 1e-3, "adam {adam}");
    }

    #[test]
    fn zero_rate_is_identity() {
        assert_eq!(converge(OptimizerKind::adam(0.0), 10), -2.0);
        assert_eq!(converge(OptimizerKind::sgd(0.0, 0.9), 10), -2.0);
        assert!(OptimizerKind::adam(-1.0).validate().is_err());
    }
}
