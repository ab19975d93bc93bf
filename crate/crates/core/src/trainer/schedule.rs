use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch budgets and optimizer hyper-parameters of the three phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSchedule {
    pub warmup_epochs: usize,
    pub search_epochs: usize,
    pub retrain_epochs: usize,
    /// Weight epochs per alternation cycle.
    pub weight_epochs_per_cycle: usize,
    /// Logit epochs per alternation cycle.
    pub theta_epochs_per_cycle: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub lr0: f64,
    pub momentum: f64,
    /// Initial learning rate of the path logits.
    pub theta_lr0: f64,
    /// Initial learning rate of the clipping thresholds.
    pub alpha_lr0: f64,
    pub batch_size: usize,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 10,
            search_epochs: 80,
            retrain_epochs: 200,
            weight_epochs_per_cycle: 2,
            theta_epochs_per_cycle: 1,
            tau_start: 5.0,
            tau_end: 0.5,
            lr0: 0.02,
            momentum: 0.9,
            theta_lr0: 0.02,
            alpha_lr0: 0.02,
            batch_size: 32,
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("warmup_epochs", self.warmup_epochs),
            ("search_epochs", self.search_epochs),
            ("retrain_epochs", self.retrain_epochs),
            ("weight_epochs_per_cycle", self.weight_epochs_per_cycle),
            ("theta_epochs_per_cycle", self.theta_epochs_per_cycle),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.tau_start > self.tau_end && self.tau_end > 0.0) {
            return Err(Error::invalid(format!(
                "temperature schedule needs tau_start > tau_end > 0, got {} -> {}",
                self.tau_start, self.tau_end
            )));
        }
        for (name, v) in [
            ("lr0", self.lr0),
            ("theta_lr0", self.theta_lr0),
            ("alpha_lr0", self.alpha_lr0),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// Whether search epoch `epoch` updates the path logits (otherwise the
    /// weights and thresholds).
    pub fn is_theta_epoch(&self, epoch: usize) -> bool {
        let cycle = self.weight_epochs_per_cycle + self.theta_epochs_per_cycle;
        epoch % cycle >= self.weight_epochs_per_cycle
    }
}

/// Geometric temperature decay hitting `tau_start` at epoch 0 and `tau_end`
/// at the last search epoch. Fractional epochs interpolate.
pub fn tau_schedule(epoch: f64, schedule: &PhaseSchedule) -> Result<f64> {
    if schedule.search_epochs < 2 {
        return Err(Error::invalid("temperature schedule needs at least 2 search epochs"));
    }
    let last = (schedule.search_epochs - 1) as f64;
    if !(0.0..=last).contains(&epoch) {
        return Err(Error::invalid(format!("epoch {epoch} outside [0, {last}]")));
    }
    let ratio = schedule.tau_end / schedule.tau_start;
    Ok(schedule.tau_start * ratio.powf(epoch / last))
}

/// Device-noise settings for variation-aware training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Relative std of multiplicative weight noise.
    pub weight_sigma: f64,
    /// Relative std of CAM boundary variation.
    pub macam_sigma: f64,
    pub mc_samples: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            weight_sigma: 0.05,
            macam_sigma: 0.128,
            mc_samples: 10_000,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            weight_sigma: 0.0,
            macam_sigma: 0.0,
            mc_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_sigma >= 0.0 && self.macam_sigma >= 0.0) {
            return Err(Error::invalid("noise sigmas must be >= 0"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_endpoints_and_midpoint() {
        let s = PhaseSchedule::default();
        assert!((tau_schedule(0.0, &s).unwrap() - 5.0).abs() < 1e-12);
        assert!((tau_schedule(79.0, &s).unwrap() - 0.5).abs() < 1e-12);
        // geometric mean of the endpoints
        assert!((tau_schedule(39.5, &s).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(tau_schedule(80.0, &s).is_err());
        let short = PhaseSchedule {
            search_epochs: 1,
            ..s
        };
        assert!(tau_schedule(0.0, &short).is_err());
    }

    #[test]
    fn alternation_two_to_one() {
        let s = PhaseSchedule::default();
        let pattern: Vec<bool> = (0..6).map(|e| s.is_theta_epoch(e)).collect();
        assert_eq!(pattern, [false, false, true, false, false, true]);
    }

    #[test]
    fn schedule_validation() {
        assert!(PhaseSchedule::default().validate().is_ok());
        let bad = PhaseSchedule {
            tau_start: 0.5,
            tau_end: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
