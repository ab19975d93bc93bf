use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    #[serde(default = "default_true")]
    pub requires_grad: bool,
}

fn default_true() -> bool {
    true
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: false,
        }
    }

    /// Adds `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: Tensor) {
        match &mut self.grad {
            Some(acc) => acc.add_assign(&g),
            None => self.grad = Some(g),
        }
    }
}

/// `0.5 * lr0 * (1 + cos(pi * epoch / total_epochs))`
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::invalid("cosine_lr: total_epochs must be positive"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!(
            "cosine_lr: epoch {epoch} exceeds total {total_epochs}"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(0.5 * lr0 * (1.0 + phase.cos()))
}

/// SGD with momentum and a per-epoch cosine learning rate.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate_initial: f64,
    pub momentum: f64,
    pub epoch_count: usize,
    pub epoch: usize,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate_initial: f64, momentum: f64, epoch_count: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} outside [0, 1)")));
        }
        if epoch_count == 0 {
            return Err(Error::invalid("optimizer needs at least one epoch"));
        }
        Ok(Self {
            learning_rate_initial,
            momentum,
            epoch_count,
            epoch: 0,
            velocity: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        cosine_lr(self.epoch.min(self.epoch_count), self.epoch_count, self.learning_rate_initial)
            .unwrap_or(0.0)
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// `v <- momentum * v + grad; p <- p - lr * v`, then clears grads.
///
/// Parameters are matched to velocity buffers by position, so callers must
/// pass them in the same order on every step.
pub fn sgd_step(params: &mut [&mut Param], state: &mut OptimizerState) -> Result<()> {
    if let Some(idx) = params.iter().position(|p| p.grad.is_none()) {
        return Err(Error::MissingGrad(idx));
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    }
    if state.velocity.len() != params.len() {
        return Err(Error::invalid(format!(
            "optimizer tracks {} parameters, step received {}",
            state.velocity.len(),
            params.len()
        )));
    }
    let lr = state.learning_rate() as f32;
    let momentum = state.momentum as f32;
    for (p, v) in params.iter_mut().zip(state.velocity.iter_mut()) {
        let grad = p.grad.take().expect("checked above");
        if v.shape() != p.value.shape() || grad.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: p.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        for ((w, vel), g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(v.data_mut().iter_mut())
            .zip(grad.data())
        {
            *vel = momentum * *vel + g;
            *w -= lr * *vel;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32, g: f32) -> Param {
        let mut p = Param::new(Tensor::scalar(v));
        p.grad = Some(Tensor::scalar(g));
        p
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = scalar_param(1.0, 1.0);
        let mut st = OptimizerState::new(0.1, 0.0, 1).unwrap();
        sgd_step(&mut [&mut p], &mut st).unwrap();
        assert!((p.value.item() - 0.9).abs() < 1e-7);
        assert!(p.grad.is_none());
    }

    #[test]
    fn momentum_recursion() {
        let mut p = scalar_param(1.0, 1.0);
        let mut st = OptimizerState::new(0.1, 0.9, 1).unwrap();
        sgd_step(&mut [&mut p], &mut st).unwrap();
        p.grad = Some(Tensor::scalar(1.0));
        sgd_step(&mut [&mut p], &mut st).unwrap();
        assert!((p.value.item() - 0.71).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_fixed_point() {
        let mut p = scalar_param(0.37, 0.0);
        let mut st = OptimizerState::new(0.1, 0.9, 1).unwrap();
        sgd_step(&mut [&mut p], &mut st).unwrap();
        assert_eq!(p.value.item(), 0.37);
    }

    #[test]
    fn missing_grad_rejected() {
        let mut p = Param::new(Tensor::scalar(1.0));
        let mut st = OptimizerState::new(0.1, 0.9, 1).unwrap();
        assert!(matches!(
            sgd_step(&mut [&mut p], &mut st),
            Err(Error::MissingGrad(0))
        ));
    }

    #[test]
    fn cosine_schedule_points() {
        assert!((cosine_lr(0, 10, 0.02).unwrap() - 0.02).abs() < 1e-12);
        assert!(cosine_lr(10, 10, 0.02).unwrap().abs() < 1e-12);
        assert!((cosine_lr(5, 10, 0.02).unwrap() - 0.01).abs() < 1e-12);
        assert!(cosine_lr(0, 0, 0.02).is_err());
    }
}
