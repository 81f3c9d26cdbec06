//! Surrogate TMS subjects: a monotone log-amplitude curve through
//! `(threshold, ln 50)` plus bounded symmetric noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::Prior;
use crate::sequence::{Observation, Outcome, Responder, ResponseMode, TrialRng, LN_50_UV};

/// Stimulator range in % machine output.
pub const X_MIN: f64 = 0.0;
pub const X_MAX: f64 = 100.0;

/// Truncation point of the bounded noise kinds, in units of `noise_sd`.
pub const NOISE_TRUNCATION: f64 = 4.0;

/// Shape of `f` in log-amplitude space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    Linear,
    /// Logistic between `floor` and `ceiling` (both ln-µV).
    LogisticSigmoid { floor: f64, ceiling: f64 },
}

impl Curve {
    /// `ln 10 µV` to `ln 5000 µV`.
    pub fn default_sigmoid() -> Self {
        Curve::LogisticSigmoid {
            floor: 10f64.ln(),
            ceiling: 5000f64.ln(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Curve::Linear => Ok(()),
            Curve::LogisticSigmoid { floor, ceiling } => {
                if floor.is_finite() && ceiling.is_finite() && floor < LN_50_UV && LN_50_UV < ceiling {
                    Ok(())
                } else {
                    Err(Error::config(
                        "curve",
                        format!("need floor < ln 50 < ceiling, got [{floor}, {ceiling}]"),
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Normal truncated at `±4 sd`.
    #[default]
    TruncatedNormal,
    /// Logistic with standard deviation `sd`, truncated at `±4 sd`.
    Logistic,
    /// Uniform on `±√3 sd`.
    Uniform,
}

impl NoiseKind {
    /// Half-width of the support for a given standard deviation.
    pub fn bound(self, sd: f64) -> f64 {
        match self {
            NoiseKind::TruncatedNormal | NoiseKind::Logistic => NOISE_TRUNCATION * sd,
            NoiseKind::Uniform => 3f64.sqrt() * sd,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, sd: f64, rng: &mut R) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        match self {
            NoiseKind::TruncatedNormal => loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= NOISE_TRUNCATION {
                    return sd * z;
                }
            },
            NoiseKind::Logistic => {
                let scale = sd * 3f64.sqrt() / std::f64::consts::PI;
                loop {
                    let u: f64 = rng.random_range(f64::EPSILON..1.0);
                    let e = scale * (u / (1.0 - u)).ln();
                    if e.abs() <= NOISE_TRUNCATION * sd {
                        return e;
                    }
                }
            }
            NoiseKind::Uniform => {
                let h = 3f64.sqrt() * sd;
                rng.random_range(-h..=h)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualSubject {
    pub id: u64,
    /// `x_t`, % machine output.
    pub threshold: f64,
    /// `f'(x_t)`, ln-µV per % machine output.
    pub slope: f64,
    pub curve: Curve,
    /// Noise standard deviation, ln-µV.
    pub noise_sd: f64,
    pub noise_kind: NoiseKind,
    /// Seed of this subject's response streams.
    pub seed: u64,
}

impl VirtualSubject {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= X_MIN && self.threshold <= X_MAX) {
            return Err(Error::config("threshold", format!("{} outside [{X_MIN}, {X_MAX}]", self.threshold)));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::config("slope", format!("must be positive, got {}", self.slope)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::config("noise_sd", format!("must be non-negative, got {}", self.noise_sd)));
        }
        self.curve.validate()
    }

    /// Noise-free response `f(x)` in ln-µV.
    pub fn f(&self, x: f64) -> f64 {
        match self.curve {
            Curve::Linear => LN_50_UV + self.slope * (x - self.threshold),
            Curve::LogisticSigmoid { floor, ceiling } => {
                let (p, k) = self.sigmoid_shape(floor, ceiling);
                let z = k * (x - self.threshold);
                // σ(z + logit p) - p, written so that z = 0 gives exactly 0
                let delta = if z <= 0.0 {
                    let e = z.exp_m1();
                    p * (1.0 - p) * e / (1.0 + p * e)
                } else {
                    let e = (-z).exp();
                    p * (1.0 - p) * (1.0 - e) / (e * (1.0 - p) + p)
                };
                LN_50_UV + (ceiling - floor) * delta
            }
        }
    }

    /// `f'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.curve {
            Curve::Linear => self.slope,
            Curve::LogisticSigmoid { floor, ceiling } => {
                let (p, k) = self.sigmoid_shape(floor, ceiling);
                let logit = (p / (1.0 - p)).ln();
                let sig = 1.0 / (1.0 + (-(k * (x - self.threshold) + logit)).exp());
                k * (ceiling - floor) * sig * (1.0 - sig)
            }
        }
    }

    /// `(min f', max f')` over `[lo, hi]`.
    pub fn derivative_bounds(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self.curve {
            Curve::Linear => (self.slope, self.slope),
            Curve::LogisticSigmoid { floor, ceiling } => {
                let (p, k) = self.sigmoid_shape(floor, ceiling);
                let inflection = self.threshold - (p / (1.0 - p)).ln() / k;
                let (dl, dh) = (self.derivative(lo), self.derivative(hi));
                let max = if (lo..=hi).contains(&inflection) {
                    self.derivative(inflection)
                } else {
                    dl.max(dh)
                };
                (dl.min(dh), max)
            }
        }
    }

    /// Half-width of the noise support.
    pub fn noise_bound(&self) -> f64 {
        self.noise_kind.bound(self.noise_sd)
    }

    fn sigmoid_shape(&self, floor: f64, ceiling: f64) -> (f64, f64) {
        let p = (LN_50_UV - floor) / (ceiling - floor);
        let k = self.slope / ((ceiling - floor) * p * (1.0 - p));
        (p, k)
    }

    fn check_range(x: f64) -> Result<()> {
        if (X_MIN..=X_MAX).contains(&x) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                x,
                min: X_MIN,
                max: X_MAX,
            })
        }
    }

    /// `f(x) + ε` in ln-µV.
    pub fn respond_analog<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        Self::check_range(x)?;
        Ok(self.f(x) + self.noise_kind.sample(self.noise_sd, rng))
    }

    /// Response iff the analog draw reaches `ln 50`.
    pub fn respond_binary<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<Outcome> {
        let y = self.respond_analog(x, rng)?;
        Ok(if y >= LN_50_UV {
            Outcome::Response
        } else {
            Outcome::NoResponse
        })
    }
}

impl Responder for VirtualSubject {
    fn observe(&mut self, x: f64, mode: ResponseMode, rng: &mut TrialRng) -> Result<Observation> {
        match mode {
            ResponseMode::Analog => self.respond_analog(x, rng).map(Observation::Analog),
            ResponseMode::Binary => self.respond_binary(x, rng).map(Observation::Binary),
        }
    }

    fn threshold(&self) -> Option<f64> {
        Some(self.threshold)
    }
}

/// Closed interval sampled uniformly; `min == max` gives a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn validate_positive(&self, field: &'static str) -> Result<()> {
        if self.min > 0.0 && self.min <= self.max && self.max.is_finite() {
            Ok(())
        } else {
            Err(Error::config(field, format!("range [{}, {}] must be positive and ordered", self.min, self.max)))
        }
    }

    pub fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Distribution of virtual subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub threshold_prior: Prior,
    /// Thresholds outside this range are re-drawn.
    pub threshold_range: Range,
    pub slope: Range,
    pub noise_sd: Range,
    pub curve: Curve,
    pub noise_kind: NoiseKind,
    pub max_retries: u32,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            threshold_prior: Prior::normal(65.0, 10.0).expect("valid"),
            threshold_range: Range { min: 1.0, max: 99.0 },
            slope: Range::fixed(0.04),
            noise_sd: Range::fixed(0.6),
            curve: Curve::default_sigmoid(),
            noise_kind: NoiseKind::TruncatedNormal,
            max_retries: 1000,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.threshold_range;
        if !(r.min >= X_MIN && r.max <= X_MAX && r.min <= r.max) {
            return Err(Error::config("threshold_range", format!("[{}, {}] not inside [{X_MIN}, {X_MAX}]", r.min, r.max)));
        }
        if !(self.slope.min > 0.0 && self.slope.min <= self.slope.max && self.slope.max.is_finite()) {
            return Err(Error::config("slope", "range must be positive and ordered"));
        }
        if !(self.noise_sd.min >= 0.0 && self.noise_sd.min <= self.noise_sd.max && self.noise_sd.max.is_finite()) {
            return Err(Error::config("noise_sd", "range must be non-negative and ordered"));
        }
        if !self.threshold_prior.is_proper() {
            return Err(Error::config("threshold_prior", "must be proper"));
        }
        self.curve.validate()
    }
}

/// Draw one subject; `id` is stored on the result.
pub fn sample_subject<R: Rng + ?Sized>(pop: &PopulationSpec, id: u64, rng: &mut R) -> Result<VirtualSubject> {
    pop.validate()?;
    let r = pop.threshold_range;
    let mut threshold = None;
    for _ in 0..=pop.max_retries {
        let t = pop.threshold_prior.sample(rng)?;
        if t >= r.min && t <= r.max {
            threshold = Some(t);
            break;
        }
    }
    let threshold = threshold.ok_or_else(|| {
        Error::config(
            "threshold_prior",
            format!("no draw inside [{}, {}] after {} retries", r.min, r.max, pop.max_retries),
        )
    })?;
    Ok(VirtualSubject {
        id,
        threshold,
        slope: pop.slope.sample(rng),
        curve: pop.curve,
        noise_sd: pop.noise_sd.sample(rng),
        noise_kind: pop.noise_kind,
        seed: rng.next_u64(),
    })
}

/// One JSON object per line.
pub fn write_population(path: &Path, subjects: &[VirtualSubject]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in subjects {
        let line = serde_json::to_string(s).expect("subject serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_population(path: &Path) -> Result<Vec<VirtualSubject>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: VirtualSubject = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        s.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        out.push(s);
    }
    Ok(out)
}
