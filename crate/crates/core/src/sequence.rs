//! One-dimensional sequence engines: standard Robbins-Monro, the
//! prior-informed single-step variant and the iterative Bayesian variant.
//!
//! All three share [`SequenceState`] and are driven one observation at a time
//! through [`step`]. Each step either commits fully or leaves the state
//! untouched.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{CDecay, GaussianBelief};
use crate::error::{Error, Result};
use crate::map::map_solve;
use crate::prior::Prior;
use crate::trace::{StepRecord, TrialTrace};

/// RNG used for every simulated trial.
pub type TrialRng = ChaCha8Rng;

/// Target response `ln(50 µV)`.
pub const LN_50_UV: f64 = 3.912_023_005_428_146;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    PriorInformed,
    IterativeBayesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    Analog,
    Binary,
}

impl ResponseMode {
    fn name(self) -> &'static str {
        match self {
            ResponseMode::Analog => "analog",
            ResponseMode::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Response,
    NoResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Log response amplitude, in the same units as `y_target`.
    Analog(f64),
    Binary(Outcome),
}

impl Observation {
    pub fn mode(&self) -> ResponseMode {
        match self {
            Observation::Analog(_) => ResponseMode::Analog,
            Observation::Binary(_) => ResponseMode::Binary,
        }
    }
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Analog(y) => write!(f, "{y}"),
            Observation::Binary(Outcome::Response) => f.write_str("response"),
            Observation::Binary(Outcome::NoResponse) => f.write_str("no_response"),
        }
    }
}

impl FromStr for Observation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" => Ok(Observation::Binary(Outcome::Response)),
            "no_response" => Ok(Observation::Binary(Outcome::NoResponse)),
            other => other
                .parse::<f64>()
                .map(Observation::Analog)
                .map_err(|_| Error::InvalidObservation(format!("cannot parse `{other}`"))),
        }
    }
}

/// Everything needed to run one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub variant: Variant,
    pub response_mode: ResponseMode,
    /// Step scale: x-units per y-unit (analog) or x-units (binary).
    pub s: f64,
    /// RM-distribution scale; unused by the standard variant.
    pub c: f64,
    /// Step exponent for the standard and prior-informed variants.
    pub gamma: f64,
    pub y_target: f64,
    pub c_decay: CDecay,
    pub prior: Prior,
    pub x_min: f64,
    pub x_max: f64,
    /// Initial point `x_1`; defaults to the prior mode, or the middle of the
    /// admissible range when the prior is flat or unused.
    pub x_start: Option<f64>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Method::AcsU.config()
    }
}

impl SequenceConfig {
    /// Field-level validation; the first offending field is reported.
    pub fn validate(&self) -> Result<()> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        positive("s", self.s)?;
        if self.variant != Variant::Standard {
            positive("c", self.c)?;
        }
        if self.variant != Variant::IterativeBayesian && !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0.5, 1], got {}", self.gamma)));
        }
        if !self.y_target.is_finite() {
            return Err(Error::config("y_target", "must be finite"));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::config(
                "x_min",
                format!("admissible range [{}, {}] is empty", self.x_min, self.x_max),
            ));
        }
        if self.variant == Variant::PriorInformed && !self.prior.is_proper() {
            return Err(Error::config("prior", "prior-informed sequences need a proper prior"));
        }
        if let Some(x) = self.x_start {
            if !(x >= self.x_min && x <= self.x_max) {
                return Err(Error::config(
                    "x_start",
                    format!("{x} outside [{}, {}]", self.x_min, self.x_max),
                ));
            }
        }
        Ok(())
    }

    pub fn initial_point(&self) -> f64 {
        let default = match (self.variant, self.prior.mode()) {
            (Variant::Standard, _) | (_, None) => 0.5 * (self.x_min + self.x_max),
            (_, Some(mode)) => mode,
        };
        self.clamp(self.x_start.unwrap_or(default))
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.x_min, self.x_max)
    }

    /// Step size `s_i`: `s / i^γ`, or the constant `s` for the iterative
    /// Bayesian variant.
    pub fn step_size(&self, i: usize) -> f64 {
        match self.variant {
            Variant::IterativeBayesian => self.s,
            _ if self.gamma == 1.0 => self.s / i as f64,
            _ => self.s / (i as f64).powf(self.gamma),
        }
    }

    /// Signed residual `y - y_t`; binary outcomes map to `+1` / `-1`.
    pub fn residual(&self, obs: Observation) -> Result<f64> {
        if obs.mode() != self.response_mode {
            return Err(Error::ModeMismatch {
                expected: self.response_mode.name(),
                actual: obs.mode().name(),
            });
        }
        match obs {
            Observation::Analog(y) if !y.is_finite() => {
                Err(Error::InvalidObservation(format!("response must be finite, got {y}")))
            }
            Observation::Analog(y) => Ok(y - self.y_target),
            Observation::Binary(Outcome::Response) => Ok(1.0),
            Observation::Binary(Outcome::NoResponse) => Ok(-1.0),
        }
    }

    /// Binary outcome of an analog reading; ties count as a response.
    pub fn classify(&self, y: f64) -> Outcome {
        if y >= self.y_target {
            Outcome::Response
        } else {
            Outcome::NoResponse
        }
    }
}

/// The six named variants compared in the TMS application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ACS")]
    Acs,
    #[serde(rename = "DCS")]
    Dcs,
    #[serde(rename = "ACS-PI")]
    AcsPi,
    #[serde(rename = "DCS-PI")]
    DcsPi,
    #[serde(rename = "ACSu")]
    AcsU,
    #[serde(rename = "DCSu")]
    DcsU,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Acs,
        Method::Dcs,
        Method::AcsPi,
        Method::DcsPi,
        Method::AcsU,
        Method::DcsU,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Acs => "ACS",
            Method::Dcs => "DCS",
            Method::AcsPi => "ACS-PI",
            Method::DcsPi => "DCS-PI",
            Method::AcsU => "ACSu",
            Method::DcsU => "DCSu",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Method::Acs | Method::Dcs => Variant::Standard,
            Method::AcsPi | Method::DcsPi => Variant::PriorInformed,
            Method::AcsU | Method::DcsU => Variant::IterativeBayesian,
        }
    }

    pub fn response_mode(self) -> ResponseMode {
        match self {
            Method::Acs | Method::AcsPi | Method::AcsU => ResponseMode::Analog,
            Method::Dcs | Method::DcsPi | Method::DcsU => ResponseMode::Binary,
        }
    }

    /// Reference operating point `(s, c)` reported for the TMS comparison.
    pub fn reference_parameters(self) -> (f64, f64) {
        match self {
            Method::Acs | Method::Dcs => (20.0, 1.0),
            Method::AcsPi | Method::DcsPi => (17.0, 15.0),
            Method::AcsU => (10.0, 30.0),
            Method::DcsU => (5.0, 30.0),
        }
    }

    /// Default configuration: reference operating point, prior `N(65, 10²)`,
    /// target `ln 50`, `γ = 1`, range `[0, 100]` % machine output.
    pub fn config(self) -> SequenceConfig {
        let (s, c) = self.reference_parameters();
        SequenceConfig {
            variant: self.variant(),
            response_mode: self.response_mode(),
            s,
            c,
            gamma: 1.0,
            y_target: LN_50_UV,
            c_decay: CDecay::Reciprocal,
            prior: Prior::normal(65.0, 10.0).expect("valid default prior"),
            x_min: 0.0,
            x_max: 100.0,
            x_start: None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "acs" => Ok(Method::Acs),
            "dcs" => Ok(Method::Dcs),
            "acspi" => Ok(Method::AcsPi),
            "dcspi" => Ok(Method::DcsPi),
            "acsu" => Ok(Method::AcsU),
            "dcsu" => Ok(Method::DcsU),
            _ => Err(Error::config("variant", format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub x: f64,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceState {
    /// Step index `i` of the current iterate, starting at 1.
    step: usize,
    x: f64,
    /// Product of absorbed RM distributions (iterative Bayesian only).
    belief: Option<GaussianBelief>,
    history: Vec<HistoryEntry>,
}

impl SequenceState {
    pub fn new(config: &SequenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::starting_at(config, config.initial_point()))
    }

    fn starting_at(config: &SequenceConfig, x: f64) -> Self {
        SequenceState {
            step: 1,
            x,
            belief: (config.variant == Variant::IterativeBayesian).then(GaussianBelief::empty),
            history: Vec::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Current iterate `x_i`.
    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn belief(&self) -> Option<&GaussianBelief> {
        self.belief.as_ref()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }
}

/// What one step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub x_before: f64,
    pub x_after: f64,
    pub residual: f64,
    /// Implied standard-form step `(x_i - x_{i+1}) / residual`.
    pub equivalent_step: Option<f64>,
    /// Whether the update hit the admissible range.
    pub clamped: bool,
}

/// `(x_i - x_{i+1}) / residual`; `None` for a zero residual.
pub fn equivalent_step_size(x_before: f64, x_after: f64, residual: f64) -> Option<f64> {
    (residual != 0.0).then(|| (x_before - x_after) / residual)
}

fn require_variant(config: &SequenceConfig, v: Variant) -> Result<()> {
    if config.variant == v {
        Ok(())
    } else {
        Err(Error::config("variant", format!("expected {v:?}, got {:?}", config.variant)))
    }
}

fn commit(
    state: &mut SequenceState,
    config: &SequenceConfig,
    obs: Observation,
    residual: f64,
    unclamped: f64,
    belief: Option<GaussianBelief>,
) -> StepReport {
    let x_before = state.x;
    let x_after = config.clamp(unclamped);
    state.history.push(HistoryEntry {
        x: x_before,
        observation: obs,
    });
    state.x = x_after;
    state.belief = belief;
    let report = StepReport {
        step: state.step,
        x_before,
        x_after,
        residual,
        equivalent_step: equivalent_step_size(x_before, x_after, residual),
        clamped: x_after != unclamped,
    };
    state.step += 1;
    report
}

/// `x_{i+1} = x_i - (s / i^γ) r_i`.
pub fn step_standard(state: &mut SequenceState, config: &SequenceConfig, obs: Observation) -> Result<StepReport> {
    require_variant(config, Variant::Standard)?;
    let r = config.residual(obs)?;
    let next = state.x - config.step_size(state.step) * r;
    Ok(commit(state, config, obs, r, next, None))
}

/// `x_{i+1} = argmax P(x) · N(x | x_i - s_i r_i, c_i²)`.
pub fn step_prior_informed(
    state: &mut SequenceState,
    config: &SequenceConfig,
    obs: Observation,
) -> Result<StepReport> {
    require_variant(config, Variant::PriorInformed)?;
    let r = config.residual(obs)?;
    let i = state.step as u64;
    let target = state.x - config.step_size(state.step) * r;
    let single = GaussianBelief::single(target, config.c_decay.precision_at(config.c, i))?;
    let next = map_solve(&single, &config.prior)?;
    Ok(commit(state, config, obs, r, next, None))
}

/// Absorb `N(x | x_i - s r_i, c_i²)` into the running product and move to
/// the MAP of prior times product.
pub fn step_ibrm(state: &mut SequenceState, config: &SequenceConfig, obs: Observation) -> Result<StepReport> {
    require_variant(config, Variant::IterativeBayesian)?;
    let r = config.residual(obs)?;
    let i = state.step as u64;
    let mut belief = state.belief.unwrap_or_default();
    belief.absorb_step(state.x - config.s * r, i, config.c, config.c_decay)?;
    let next = map_solve(&belief, &config.prior)?;
    Ok(commit(state, config, obs, r, next, Some(belief)))
}

/// Dispatch on `config.variant`.
pub fn step(state: &mut SequenceState, config: &SequenceConfig, obs: Observation) -> Result<StepReport> {
    match config.variant {
        Variant::Standard => step_standard(state, config, obs),
        Variant::PriorInformed => step_prior_informed(state, config, obs),
        Variant::IterativeBayesian => step_ibrm(state, config, obs),
    }
}

/// Replay a list of observations from the initial point.
pub fn replay(config: &SequenceConfig, observations: &[Observation]) -> Result<SequenceState> {
    let mut state = SequenceState::new(config)?;
    for (k, &obs) in observations.iter().enumerate() {
        step(&mut state, config, obs).map_err(|e| e.at_step(k + 1))?;
    }
    Ok(state)
}

/// Source of observations for [`run_sequence`].
pub trait Responder {
    fn observe(&mut self, x: f64, mode: ResponseMode, rng: &mut TrialRng) -> Result<Observation>;

    /// True root, when known, so traces can carry `Δx`.
    fn threshold(&self) -> Option<f64> {
        None
    }
}

/// Replays a fixed list of observations regardless of `x`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    queue: VecDeque<Observation>,
}

impl ScriptedResponder {
    pub fn new(observations: impl IntoIterator<Item = Observation>) -> Self {
        ScriptedResponder {
            queue: observations.into_iter().collect(),
        }
    }
}

impl Responder for ScriptedResponder {
    fn observe(&mut self, _x: f64, _mode: ResponseMode, _rng: &mut TrialRng) -> Result<Observation> {
        self.queue
            .pop_front()
            .ok_or_else(|| Error::InvalidObservation("script exhausted".into()))
    }
}

/// Run `n_steps` steps against `responder` with a fresh RNG seeded from `seed`.
pub fn run_sequence<R: Responder + ?Sized>(
    config: &SequenceConfig,
    responder: &mut R,
    n_steps: usize,
    seed: u64,
) -> Result<TrialTrace> {
    let mut rng = TrialRng::seed_from_u64(seed);
    let mut trace = run_with_rng(config, responder, n_steps, &mut rng)?;
    trace.seed = seed;
    Ok(trace)
}

pub(crate) fn run_with_rng<R: Responder + ?Sized>(
    config: &SequenceConfig,
    responder: &mut R,
    n_steps: usize,
    rng: &mut TrialRng,
) -> Result<TrialTrace> {
    let mut state = SequenceState::new(config)?;
    let threshold = responder.threshold();
    let mut records = Vec::with_capacity(n_steps + 1);
    for i in 1..=n_steps {
        let x = state.x;
        let obs = responder
            .observe(x, config.response_mode, rng)
            .map_err(|e| e.at_step(i))?;
        let report = step(&mut state, config, obs).map_err(|e| e.at_step(i))?;
        records.push(StepRecord {
            step: i,
            x,
            dx: threshold.map(|t| x - t),
            observation: Some(obs),
            equivalent_step: report.equivalent_step,
            clamped: report.clamped,
        });
    }
    records.push(StepRecord {
        step: n_steps + 1,
        x: state.x,
        dx: threshold.map(|t| state.x - t),
        observation: None,
        equivalent_step: None,
        clamped: false,
    });
    Ok(TrialTrace {
        records,
        ..TrialTrace::default()
    })
}
