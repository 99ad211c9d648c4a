use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};

/// Linear warm-up followed by inverse-square-root decay.
///
/// `lr(step) = peak · min(step / warmup, sqrt(warmup / step))` with
/// `peak = peak_factor / sqrt(dim_model · warmup_steps)`, so `peak_factor`
/// is a dimensionless scale rather than a learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub peak_factor: f64,
    pub warmup_steps: u64,
    pub dim_model: usize,
}

impl LrSchedule {
    pub fn new(peak_factor: f64, warmup_steps: u64, dim_model: usize) -> Result<Self> {
        let s = Self { peak_factor, warmup_steps, dim_model };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.dim_model == 0 || !(self.peak_factor > 0.0 && self.peak_factor.is_finite()) {
            return Err(DncError::InvalidArgument(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn peak(&self) -> f64 {
        self.peak_factor / ((self.dim_model as f64) * self.warmup_steps as f64).sqrt()
    }

    /// Learning rate for 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.peak() * (s / w).min((w / s).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apex_decay_and_ramp() {
        let s = LrSchedule::new(12.0, 400, 256).unwrap();
        assert_eq!(s.lr(400), s.peak());
        assert!((s.lr(1600) - s.peak() / 2.0).abs() < 1e-18);
        assert!((1..400).all(|t| s.lr(t) < s.lr(t + 1)));
        assert!(s.lr(399) < s.lr(400) && s.lr(400) > s.lr(401));
        assert!((s.lr(1) - s.peak() / 400.0).abs() < 1e-18);
        assert!(LrSchedule::new(1.0, 0, 8).is_err());
    }
}
