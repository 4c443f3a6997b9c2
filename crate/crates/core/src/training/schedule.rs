use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainingError;

/// Cosine one-cycle learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneCycleConfig {
    pub peak: f64,
    pub start: f64,
    #[serde(rename = "final")]
    pub final_lr: f64,
    pub rise_fraction: f64,
    pub total_steps: usize,
}

impl Default for OneCycleConfig {
    fn default() -> Self {
        OneCycleConfig {
            peak: 0.1,
            start: 4e-3,
            final_lr: 1e-5,
            rise_fraction: 0.3,
            total_steps: 1,
        }
    }
}

impl OneCycleConfig {
    pub fn with_total_steps(self, total_steps: usize) -> Self {
        OneCycleConfig {
            total_steps,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let ok = self.start > 0.0
            && self.final_lr > 0.0
            && self.start <= self.peak
            && self.final_lr <= self.peak
            && self.peak.is_finite()
            && self.rise_fraction > 0.0
            && self.rise_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig(format!("bad one-cycle schedule {self:?}")))
        }
    }

    /// Learning rate at `step` in `0..=total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64, TrainingError> {
        self.validate()?;
        if step > self.total_steps {
            return Err(TrainingError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let total = self.total_steps as f64;
        let rise = self.rise_fraction * total;
        let s = step as f64;
        if s <= rise {
            if rise == 0.0 {
                return Ok(self.start);
            }
            let t = s / rise;
            Ok(self.start + (self.peak - self.start) * (1.0 - (PI * t).cos()) / 2.0)
        } else {
            let t = (s - rise) / (total - rise);
            Ok(self.final_lr + (self.peak - self.final_lr) * (1.0 + (PI * t).cos()) / 2.0)
        }
    }
}
