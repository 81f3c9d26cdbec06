//! Precision-form Gaussian summary of the running product of RM distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the RM-distribution scale evolves with the step index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CDecay {
    /// `c_k = c / k`, so step `k` contributes precision `k² / c²`.
    #[default]
    Reciprocal,
    /// `c_k = c`, so every step contributes precision `1 / c²`.
    Constant,
}

impl CDecay {
    /// Standard deviation `c_k` of the RM distribution at step `k`.
    pub fn scale_at(self, c: f64, k: u64) -> f64 {
        match self {
            CDecay::Reciprocal => c / k as f64,
            CDecay::Constant => c,
        }
    }

    /// Precision `1 / c_k²` of the RM distribution at step `k`.
    pub fn precision_at(self, c: f64, k: u64) -> f64 {
        match self {
            CDecay::Reciprocal => {
                let k = k as f64;
                k * k / (c * c)
            }
            CDecay::Constant => 1.0 / (c * c),
        }
    }
}

/// Product of normal densities held as `(Σ w_k, Σ w_k m_k)` with `w_k` the
/// per-step precision. The product is itself normal with precision `Σ w_k`
/// and mean `Σ w_k m_k / Σ w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianBelief {
    precision: f64,
    weighted_mean_sum: f64,
    count: u64,
}

impl GaussianBelief {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A belief holding a single normal factor `N(mean, 1/precision)`.
    pub fn single(mean: f64, precision: f64) -> Result<Self> {
        let mut b = Self::empty();
        b.absorb_weighted(mean, precision)?;
        Ok(b)
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn weighted_mean_sum(&self) -> f64 {
        self.weighted_mean_sum
    }

    /// Number of factors absorbed so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Mean of the product; `None` while nothing has been absorbed.
    pub fn mean(&self) -> Option<f64> {
        (self.precision > 0.0).then(|| self.weighted_mean_sum / self.precision)
    }

    pub fn variance(&self) -> Result<f64> {
        if self.precision > 0.0 {
            Ok(1.0 / self.precision)
        } else {
            Err(Error::UndefinedVariance)
        }
    }

    /// Absorb the RM distribution `N(x | rm_mean, (c/k)²)` of step `k`.
    pub fn absorb(&mut self, rm_mean: f64, k: u64, c: f64) -> Result<()> {
        self.absorb_step(rm_mean, k, c, CDecay::Reciprocal)
    }

    /// Like [`absorb`](Self::absorb) with an explicit scale decay law.
    pub fn absorb_step(&mut self, rm_mean: f64, k: u64, c: f64, decay: CDecay) -> Result<()> {
        if k != self.count + 1 {
            return Err(Error::StepIndexMismatch {
                count: self.count,
                k,
            });
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config("c", format!("must be positive, got {c}")));
        }
        self.absorb_weighted(rm_mean, decay.precision_at(c, k))
    }

    /// Value-returning form of [`absorb`](Self::absorb).
    pub fn absorbed(mut self, rm_mean: f64, k: u64, c: f64) -> Result<Self> {
        self.absorb(rm_mean, k, c)?;
        Ok(self)
    }

    fn absorb_weighted(&mut self, mean: f64, precision: f64) -> Result<()> {
        if !mean.is_finite() {
            return Err(Error::InvalidObservation(format!(
                "RM mean must be finite, got {mean}"
            )));
        }
        if !(precision.is_finite() && precision > 0.0) {
            return Err(Error::config("c", format!("step precision must be positive and finite, got {precision}")));
        }
        let precision_next = self.precision + precision;
        let sum_next = self.weighted_mean_sum + precision * mean;
        if !(precision_next.is_finite() && sum_next.is_finite()) {
            return Err(Error::InvalidObservation("belief overflow".into()));
        }
        self.precision = precision_next;
        self.weighted_mean_sum = sum_next;
        self.count += 1;
        Ok(())
    }
}
