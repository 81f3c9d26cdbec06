//! Multi-dimensional IBRM with isotropic RM covariance `C_k = (c/k)² I`.
//!
//! With an isotropic Gaussian product and a separable prior the posterior
//! factorizes across coordinates, so the MAP is found coordinate-wise with
//! the same solver as the 1D engine.

use serde::{Deserialize, Serialize};

use crate::belief::{CDecay, GaussianBelief};
use crate::error::{Error, Result};
use crate::map::{map_solve, MAP_TOL};
use crate::prior::Prior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorBelief {
    precision: f64,
    weighted_mean_sum: Vec<f64>,
    count: u64,
}

impl VectorBelief {
    pub fn empty(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        Ok(VectorBelief {
            precision: 0.0,
            weighted_mean_sum: vec![0.0; dim],
            count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.weighted_mean_sum.len()
    }

    /// Scalar precision; the covariance is `I / precision`.
    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn weighted_mean_sum(&self) -> &[f64] {
        &self.weighted_mean_sum
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<Vec<f64>> {
        (self.precision > 0.0).then(|| self.weighted_mean_sum.iter().map(|w| w / self.precision).collect())
    }

    /// The 1D belief of coordinate `j`.
    pub fn marginal(&self, j: usize) -> GaussianBelief {
        let mut b = GaussianBelief::empty();
        if self.precision > 0.0 {
            b = GaussianBelief::single(self.weighted_mean_sum[j] / self.precision, self.precision)
                .expect("finite belief");
        }
        b
    }

    /// Absorb `N(x | rm_mean, (c/k)² I)`.
    pub fn absorb(&mut self, rm_mean: &[f64], k: u64, c: f64) -> Result<()> {
        self.absorb_step(rm_mean, k, c, CDecay::Reciprocal)
    }

    pub fn absorb_step(&mut self, rm_mean: &[f64], k: u64, c: f64, decay: CDecay) -> Result<()> {
        if rm_mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: rm_mean.len(),
            });
        }
        if k != self.count + 1 {
            return Err(Error::StepIndexMismatch { count: self.count, k });
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config("c", format!("must be positive, got {c}")));
        }
        if let Some(bad) = rm_mean.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation(format!("RM mean component must be finite, got {bad}")));
        }
        let w = decay.precision_at(c, k);
        let precision = self.precision + w;
        let sums: Vec<f64> = self
            .weighted_mean_sum
            .iter()
            .zip(rm_mean)
            .map(|(acc, m)| acc + w * m)
            .collect();
        if !precision.is_finite() || sums.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation("belief overflow".into()));
        }
        self.precision = precision;
        self.weighted_mean_sum = sums;
        self.count += 1;
        Ok(())
    }
}

/// Prior over a vector root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorPrior {
    /// `N(location, scale² I)`.
    IsotropicNormal { location: Vec<f64>, scale: f64 },
    /// Independent 1D priors, one per coordinate.
    Product { factors: Vec<Prior> },
}

impl VectorPrior {
    pub fn isotropic_normal(location: Vec<f64>, scale: f64) -> Result<Self> {
        if location.is_empty() {
            return Err(Error::config("location", "must have at least one coordinate"));
        }
        if location.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("location", "must be finite"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config("scale", format!("must be positive, got {scale}")));
        }
        Ok(VectorPrior::IsotropicNormal { location, scale })
    }

    pub fn product(factors: Vec<Prior>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::config("factors", "must have at least one coordinate"));
        }
        Ok(VectorPrior::Product { factors })
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorPrior::IsotropicNormal { location, .. } => location.len(),
            VectorPrior::Product { factors } => factors.len(),
        }
    }

    /// The 1D prior of coordinate `j`.
    pub fn marginal(&self, j: usize) -> Prior {
        match self {
            VectorPrior::IsotropicNormal { location, scale } => {
                Prior::normal(location[j], *scale).expect("validated on construction")
            }
            VectorPrior::Product { factors } => factors[j],
        }
    }

    pub fn mode(&self) -> Option<Vec<f64>> {
        (0..self.dim()).map(|j| self.marginal(j).mode()).collect()
    }

    pub fn ln_kernel(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(j, &v)| self.marginal(j).ln_kernel(v)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| self.marginal(j).score(v)).collect()
    }

    /// `sup ‖∇P / P‖`, when finite.
    pub fn ratio_bound(&self) -> Option<f64> {
        let mut sq = 0.0;
        for j in 0..self.dim() {
            sq += self.marginal(j).ratio_bound()?.powi(2);
        }
        Some(sq.sqrt())
    }
}

/// Euclidean norm of the posterior (sub)gradient at `x`.
pub fn mv_stationarity_residual(belief: &VectorBelief, prior: &VectorPrior, x: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| crate::map::stationarity_residual(&belief.marginal(j), &prior.marginal(j), x[j]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Maximizer of `P(x) · N(x | mean, I / precision)`.
pub fn mv_map_solve(belief: &VectorBelief, prior: &VectorPrior) -> Result<Vec<f64>> {
    if belief.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: belief.dim(),
            actual: prior.dim(),
        });
    }
    let mut x = Vec::with_capacity(belief.dim());
    for j in 0..belief.dim() {
        match map_solve(&belief.marginal(j), &prior.marginal(j)) {
            Ok(v) => x.push(v),
            Err(Error::SolverFailure { lo, hi, residual }) => {
                x.push(0.5 * (lo + hi));
                x.extend(belief.mean().unwrap_or_default().iter().skip(j + 1));
                return Err(Error::MvSolverFailure { last: x, residual });
            }
            Err(e) => return Err(e),
        }
    }
    debug_assert!(
        belief.precision() == 0.0
            || mv_stationarity_residual(belief, prior, &x)
                <= MAP_TOL * belief.precision().max(1.0) * (belief.dim() as f64).sqrt()
    );
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvConfig {
    /// Constant step scale.
    pub s: f64,
    pub c: f64,
    #[serde(default)]
    pub c_decay: CDecay,
    pub prior: VectorPrior,
    /// Optional coordinate-wise box applied after each update.
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub x_start: Option<Vec<f64>>,
}

impl MvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::config("s", format!("must be positive and finite, got {}", self.s)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::config("c", format!("must be positive and finite, got {}", self.c)));
        }
        if let Some((lo, hi)) = self.bounds {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(Error::config("bounds", format!("[{lo}, {hi}] is empty")));
            }
        }
        match &self.x_start {
            Some(x) if x.len() != self.prior.dim() => Err(Error::DimensionMismatch {
                expected: self.prior.dim(),
                actual: x.len(),
            }),
            Some(_) => Ok(()),
            None if self.prior.mode().is_none() => Err(Error::config("x_start", "required with a flat prior")),
            None => Ok(()),
        }
    }

    fn clamp(&self, x: &mut [f64]) -> bool {
        let Some((lo, hi)) = self.bounds else {
            return false;
        };
        let mut hit = false;
        for v in x {
            let c = v.clamp(lo, hi);
            hit |= c != *v;
            *v = c;
        }
        hit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvState {
    step: usize,
    x: Vec<f64>,
    belief: VectorBelief,
}

impl MvState {
    pub fn new(config: &MvConfig) -> Result<Self> {
        config.validate()?;
        let mut x = match &config.x_start {
            Some(x) => x.clone(),
            None => config.prior.mode().expect("validated"),
        };
        config.clamp(&mut x);
        Ok(MvState {
            step: 1,
            belief: VectorBelief::empty(x.len())?,
            x,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn belief(&self) -> &VectorBelief {
        &self.belief
    }
}

/// Absorb `x_i - s (y_i - y_t)` and move to the new MAP. `residual` is the
/// vector `y_i - y_t`. Returns whether the box clamped the update.
pub fn step_mv_ibrm(state: &mut MvState, config: &MvConfig, residual: &[f64]) -> Result<bool> {
    if residual.len() != state.x.len() {
        return Err(Error::DimensionMismatch {
            expected: state.x.len(),
            actual: residual.len(),
        });
    }
    let rm_mean: Vec<f64> = state.x.iter().zip(residual).map(|(x, r)| x - config.s * r).collect();
    let mut belief = state.belief.clone();
    belief.absorb_step(&rm_mean, state.step as u64, config.c, config.c_decay)?;
    let mut x = mv_map_solve(&belief, &config.prior)?;
    let clamped = config.clamp(&mut x);
    state.x = x;
    state.belief = belief;
    state.step += 1;
    Ok(clamped)
}
