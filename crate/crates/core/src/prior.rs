//! Prior families over the unknown root.
//!
//! Every family exposes its log-density up to an additive constant, the
//! score `d/dx ln P(x)` and its derivative, which is all the MAP solver needs.
//! The heavy-tailed and exponential-tailed families also expose the bound
//! `J = sup |P'(x) / P(x)|`; the normal prior has no such bound.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    Normal,
    Laplace,
    Logistic,
    Cauchy,
    StudentT,
    Flat,
}

impl fmt::Display for PriorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PriorFamily::Normal => "normal",
            PriorFamily::Laplace => "laplace",
            PriorFamily::Logistic => "logistic",
            PriorFamily::Cauchy => "cauchy",
            PriorFamily::StudentT => "student_t",
            PriorFamily::Flat => "flat",
        };
        f.write_str(name)
    }
}

/// Serialized form of a [`Prior`]; validated on conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: PriorFamily,
    #[serde(default)]
    pub location: f64,
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

/// A prior distribution over the root `x_t`.
///
/// `scale` is the standard deviation for `Normal` and the scale parameter `b`
/// for every other proper family. `Flat` ignores location and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpec", into = "PriorSpec")]
pub struct Prior {
    family: PriorFamily,
    location: f64,
    scale: f64,
    dof: f64,
}

impl Prior {
    pub fn normal(location: f64, sd: f64) -> Result<Self> {
        Self::build(PriorFamily::Normal, location, sd, 0.0)
    }

    pub fn laplace(location: f64, scale: f64) -> Result<Self> {
        Self::build(PriorFamily::Laplace, location, scale, 0.0)
    }

    pub fn logistic(location: f64, scale: f64) -> Result<Self> {
        Self::build(PriorFamily::Logistic, location, scale, 0.0)
    }

    pub fn cauchy(location: f64, scale: f64) -> Result<Self> {
        Self::build(PriorFamily::Cauchy, location, scale, 0.0)
    }

    pub fn student_t(location: f64, scale: f64, dof: f64) -> Result<Self> {
        if !(dof.is_finite() && dof > 0.0) {
            return Err(Error::config("prior.dof", format!("must be positive, got {dof}")));
        }
        Self::build(PriorFamily::StudentT, location, scale, dof)
    }

    pub fn flat() -> Self {
        Prior {
            family: PriorFamily::Flat,
            location: 0.0,
            scale: 1.0,
            dof: 0.0,
        }
    }

    fn build(family: PriorFamily, location: f64, scale: f64, dof: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(Error::config("prior.location", format!("must be finite, got {location}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config("prior.scale", format!("must be positive, got {scale}")));
        }
        Ok(Prior {
            family,
            location,
            scale,
            dof,
        })
    }

    pub fn family(&self) -> PriorFamily {
        self.family
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Degrees of freedom; `None` unless the family is `StudentT`.
    pub fn dof(&self) -> Option<f64> {
        (self.family == PriorFamily::StudentT).then_some(self.dof)
    }

    pub fn is_proper(&self) -> bool {
        self.family != PriorFamily::Flat
    }

    /// Whether `ln P` is concave, which makes the MAP the unique stationary point.
    pub fn is_log_concave(&self) -> bool {
        matches!(
            self.family,
            PriorFamily::Normal | PriorFamily::Laplace | PriorFamily::Logistic | PriorFamily::Flat
        )
    }

    pub fn is_heavy_tailed(&self) -> bool {
        matches!(self.family, PriorFamily::Cauchy | PriorFamily::StudentT)
    }

    pub fn mode(&self) -> Option<f64> {
        self.is_proper().then_some(self.location)
    }

    /// Precision `1/σ²` of a normal prior.
    pub fn normal_precision(&self) -> Option<f64> {
        (self.family == PriorFamily::Normal).then(|| 1.0 / (self.scale * self.scale))
    }

    /// `J = sup_x |P'(x)/P(x)|`. `None` for the normal prior, whose ratio is unbounded.
    pub fn ratio_bound(&self) -> Option<f64> {
        let b = self.scale;
        match self.family {
            PriorFamily::Normal => None,
            PriorFamily::Laplace | PriorFamily::Logistic | PriorFamily::Cauchy => Some(1.0 / b),
            PriorFamily::StudentT => {
                let nu = self.dof;
                Some((nu + 1.0) / (2.0 * nu.sqrt() * b))
            }
            PriorFamily::Flat => Some(0.0),
        }
    }

    /// Location of a non-differentiable point of `ln P`, if any.
    pub fn kink(&self) -> Option<f64> {
        (self.family == PriorFamily::Laplace).then_some(self.location)
    }

    fn z(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    /// `ln P(x)` up to a family-specific additive constant.
    pub fn ln_kernel(&self, x: f64) -> f64 {
        let z = self.z(x);
        match self.family {
            PriorFamily::Normal => -0.5 * z * z,
            PriorFamily::Laplace => -z.abs(),
            PriorFamily::Logistic => {
                let a = z.abs();
                -a - 2.0 * (-a).exp().ln_1p()
            }
            PriorFamily::Cauchy => -(z * z).ln_1p(),
            PriorFamily::StudentT => -0.5 * (self.dof + 1.0) * (z * z / self.dof).ln_1p(),
            PriorFamily::Flat => 0.0,
        }
    }

    /// Score `d/dx ln P(x) = P'(x)/P(x)`. The Laplace kink uses the zero subgradient.
    pub fn score(&self, x: f64) -> f64 {
        let z = self.z(x);
        let b = self.scale;
        match self.family {
            PriorFamily::Normal => -z / b,
            PriorFamily::Laplace => {
                if z > 0.0 {
                    -1.0 / b
                } else if z < 0.0 {
                    1.0 / b
                } else {
                    0.0
                }
            }
            PriorFamily::Logistic => -(0.5 * z).tanh() / b,
            PriorFamily::Cauchy => -2.0 * z / (b * (1.0 + z * z)),
            PriorFamily::StudentT => -(self.dof + 1.0) * z / (b * (self.dof + z * z)),
            PriorFamily::Flat => 0.0,
        }
    }

    /// Second derivative of `ln P`.
    pub fn curvature(&self, x: f64) -> f64 {
        let z = self.z(x);
        let b2 = self.scale * self.scale;
        match self.family {
            PriorFamily::Normal => -1.0 / b2,
            PriorFamily::Laplace | PriorFamily::Flat => 0.0,
            PriorFamily::Logistic => {
                let sech = 1.0 / (0.5 * z).cosh();
                -0.5 * sech * sech / b2
            }
            PriorFamily::Cauchy => {
                let d = 1.0 + z * z;
                -2.0 * (1.0 - z * z) / (b2 * d * d)
            }
            PriorFamily::StudentT => {
                let nu = self.dof;
                let d = nu + z * z;
                -(nu + 1.0) * (nu - z * z) / (b2 * d * d)
            }
        }
    }

    /// Left and right limits of the score at `x`; equal except at a kink.
    pub fn score_limits(&self, x: f64) -> (f64, f64) {
        match self.kink() {
            Some(k) if x == k => (1.0 / self.scale, -1.0 / self.scale),
            _ => {
                let s = self.score(x);
                (s, s)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let (mu, b) = (self.location, self.scale);
        let x = match self.family {
            PriorFamily::Normal => Normal::new(mu, b)
                .map_err(|e| Error::config("prior.scale", e.to_string()))?
                .sample(rng),
            PriorFamily::Laplace => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0) - 0.5;
                mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            PriorFamily::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                mu + b * (u / (1.0 - u)).ln()
            }
            PriorFamily::Cauchy => {
                let a: f64 = rng.sample(StandardNormal);
                let d: f64 = rng.sample(StandardNormal);
                mu + b * a / d
            }
            PriorFamily::StudentT => {
                let t = StudentT::new(self.dof).map_err(|e| Error::config("prior.dof", e.to_string()))?;
                mu + b * t.sample(rng)
            }
            PriorFamily::Flat => {
                return Err(Error::config("prior.family", "cannot sample from a flat prior"))
            }
        };
        Ok(x)
    }
}

impl TryFrom<PriorSpec> for Prior {
    type Error = Error;

    fn try_from(spec: PriorSpec) -> Result<Self> {
        match spec.family {
            PriorFamily::Normal => Prior::normal(spec.location, spec.scale),
            PriorFamily::Laplace => Prior::laplace(spec.location, spec.scale),
            PriorFamily::Logistic => Prior::logistic(spec.location, spec.scale),
            PriorFamily::Cauchy => Prior::cauchy(spec.location, spec.scale),
            PriorFamily::StudentT => {
                let dof = spec
                    .dof
                    .ok_or_else(|| Error::config("prior.dof", "required for student_t"))?;
                Prior::student_t(spec.location, spec.scale, dof)
            }
            PriorFamily::Flat => Ok(Prior::flat()),
        }
    }
}

impl From<Prior> for PriorSpec {
    fn from(p: Prior) -> Self {
        PriorSpec {
            family: p.family,
            location: p.location,
            scale: p.scale,
            dof: p.dof(),
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            PriorFamily::Flat => f.write_str("flat"),
            PriorFamily::StudentT => write!(
                f,
                "student_t({}, {}, dof={})",
                self.location, self.scale, self.dof
            ),
            fam => write!(f, "{fam}({}, {})", self.location, self.scale),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<Prior> {
        vec![
            Prior::normal(65.0, 10.0).unwrap(),
            Prior::laplace(65.0, 10.0).unwrap(),
            Prior::logistic(65.0, 10.0).unwrap(),
            Prior::cauchy(65.0, 10.0).unwrap(),
            Prior::student_t(65.0, 10.0, 3.0).unwrap(),
        ]
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Prior::normal(0.0, 0.0).is_err());
        assert!(Prior::laplace(0.0, -1.0).is_err());
        assert!(Prior::cauchy(f64::NAN, 1.0).is_err());
        assert!(Prior::student_t(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn score_matches_finite_difference_of_kernel() {
        let h = 1e-5;
        for p in families() {
            for &x in &[-40.0, 12.5, 58.0, 64.0, 66.0, 80.0, 200.0] {
                let fd = (p.ln_kernel(x + h) - p.ln_kernel(x - h)) / (2.0 * h);
                assert!((fd - p.score(x)).abs() < 1e-7, "{p} at {x}: {fd} vs {}", p.score(x));
                let fd2 = (p.score(x + h) - p.score(x - h)) / (2.0 * h);
                assert!((fd2 - p.curvature(x)).abs() < 1e-6, "{p} curvature at {x}");
            }
        }
    }

    #[test]
    fn ratio_bound_dominates_grid_supremum() {
        for p in families().into_iter().filter(|p| p.family() != PriorFamily::Normal) {
            let j = p.ratio_bound().unwrap();
            let sup = (0..=200_000)
                .map(|k| -1000.0 + k as f64 * 0.01)
                .map(|x| p.score(x).abs())
                .fold(0.0, f64::max);
            assert!(sup <= 1.001 * j, "{p}: sup {sup} > J {j}");
            assert!(sup >= 0.99 * j, "{p}: J {j} not attained (sup {sup})");
        }
        assert_eq!(Prior::normal(0.0, 1.0).unwrap().ratio_bound(), None);
    }

    #[test]
    fn laplace_kink_limits() {
        let p = Prior::laplace(65.0, 10.0).unwrap();
        assert_eq!(p.score(65.0), 0.0);
        assert_eq!(p.score_limits(65.0), (0.1, -0.1));
        assert_eq!(p.score_limits(60.0), (0.1, 0.1));
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let p = Prior::student_t(1.0, 2.0, 4.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Prior>(&s).unwrap(), p);
        let bad = r#"{"family":"normal","location":65,"scale":-1}"#;
        assert!(serde_json::from_str::<Prior>(bad).is_err());
        let missing_dof = r#"{"family":"student_t","location":0,"scale":1}"#;
        assert!(serde_json::from_str::<Prior>(missing_dof).is_err());
    }

    #[test]
    fn samples_are_centred() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in families().into_iter().filter(|p| !p.is_heavy_tailed()) {
            let n = 20_000;
            let mean = (0..n).map(|_| p.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
            assert!((mean - 65.0).abs() < 0.5, "{p}: mean {mean}");
        }
        // heavy tails: check the median instead
        for p in families().into_iter().filter(|p| p.is_heavy_tailed()) {
            let mut v: Vec<f64> = (0..20_001).map(|_| p.sample(&mut rng).unwrap()).collect();
            v.sort_by(f64::total_cmp);
            assert!((v[10_000] - 65.0).abs() < 0.5, "{p}: median {}", v[10_000]);
        }
        assert!(Prior::flat().sample(&mut rng).is_err());
    }
}
