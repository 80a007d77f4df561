//! Three-phase sparsity weight.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    pub phase_steps: [usize; 3],
    pub gamma_inf: f64,
}

impl GammaSchedule {
    pub fn new(phase_steps: [usize; 3], gamma_inf: f64) -> Result<Self> {
        if !(gamma_inf >= 0.0 && gamma_inf.is_finite()) {
            return Err(Error::Domain(format!("gamma_inf must be finite and >= 0, got {gamma_inf}")));
        }
        Ok(Self { phase_steps, gamma_inf })
    }

    pub fn total_steps(&self) -> usize {
        self.phase_steps.iter().sum()
    }

    /// Zero, then a cosine ramp, then constant.
    pub fn gamma(&self, step: usize) -> f64 {
        let [p1, p2, _] = self.phase_steps;
        if step < p1 {
            0.0
        } else if step < p1 + p2 {
            let frac = (step - p1 + 1) as f64 / p2 as f64;
            self.gamma_inf * 0.5 * (1.0 - (std::f64::consts::PI * frac).cos())
        } else {
            self.gamma_inf
        }
    }
}
