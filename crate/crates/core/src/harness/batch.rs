//! Seeded batch runs over a virtual population.
//!
//! Subject `j` is drawn from stream `j` of the master seed. Trial
//! `(subject, repeat)` runs on stream `repeat` of the subject's own seed, and
//! every variant replays that same stream, so variants see common random
//! numbers and results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{run_with_rng, SequenceConfig, TrialRng};
use crate::subject::{sample_subject, PopulationSpec, VirtualSubject};
use crate::trace::TrialTrace;

/// Lowest and highest admissible start point for offset starts.
pub const OFFSET_START_RANGE: (f64, f64) = (1.0, 100.0);

/// How the initial point `x_1` is chosen for each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetSpec {
    /// Use the variant's own initial point.
    Config,
    /// `x_1 = x_t ± offset`, sign drawn with equal probability.
    Fixed { offset: f64 },
    /// As `Fixed` with the offset drawn uniformly from the integers `min..=max`.
    UniformInt { min: u32, max: u32 },
}

impl Default for OffsetSpec {
    fn default() -> Self {
        OffsetSpec::UniformInt { min: 10, max: 100 }
    }
}

impl OffsetSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OffsetSpec::Fixed { offset } if !(offset.is_finite() && offset >= 0.0) => {
                Err(Error::config("offsets", format!("offset must be non-negative, got {offset}")))
            }
            OffsetSpec::UniformInt { min, max } if min > max => {
                Err(Error::config("offsets", format!("empty range {min}..={max}")))
            }
            _ => Ok(()),
        }
    }

    /// The start point for a subject with root `threshold`, or `None` to
    /// keep the configured one.
    pub fn start<R: Rng + ?Sized>(&self, threshold: f64, rng: &mut R) -> Option<f64> {
        let offset = match *self {
            OffsetSpec::Config => return None,
            OffsetSpec::Fixed { offset } => offset,
            OffsetSpec::UniformInt { min, max } => rng.random_range(min..=max) as f64,
        };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Some(offset_start(threshold, sign * offset))
    }
}

/// `x_t + signed_offset`, clamped to the start range.
pub fn offset_start(threshold: f64, signed_offset: f64) -> f64 {
    (threshold + signed_offset).clamp(OFFSET_START_RANGE.0, OFFSET_START_RANGE.1)
}

/// A labelled sequence configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: String,
    pub config: SequenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub n_subjects: usize,
    pub repeats: u32,
    pub n_steps: usize,
    pub seed: u64,
    pub offsets: OffsetSpec,
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("n_subjects", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        self.offsets.validate()
    }
}

/// A trial that errored and was excluded from the traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub variant: String,
    pub subject: u64,
    pub repeat: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTraces {
    pub label: String,
    pub traces: Vec<TrialTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub subjects: Vec<VirtualSubject>,
    pub variants: Vec<VariantTraces>,
    pub failures: Vec<TrialFailure>,
}

impl BatchResult {
    pub fn traces(&self, label: &str) -> Option<&[TrialTrace]> {
        self.variants.iter().find(|v| v.label == label).map(|v| v.traces.as_slice())
    }
}

/// Draw `n` subjects from `pop`, subject `j` on stream `j` of `seed`.
pub fn sample_population(pop: &PopulationSpec, n: usize, seed: u64) -> Result<Vec<VirtualSubject>> {
    (0..n as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = TrialRng::seed_from_u64(seed);
            rng.set_stream(j);
            sample_subject(pop, j, &mut rng)
        })
        .collect()
}

/// Sample a population and run every variant on it.
pub fn run_batch(pop: &PopulationSpec, variants: &[VariantSpec], spec: &BatchSpec) -> Result<BatchResult> {
    spec.validate()?;
    let subjects = sample_population(pop, spec.n_subjects, spec.seed)?;
    run_batch_on(subjects, variants, spec)
}

/// Run every variant on a given population; `spec.n_subjects` is ignored.
pub fn run_batch_on(subjects: Vec<VirtualSubject>, variants: &[VariantSpec], spec: &BatchSpec) -> Result<BatchResult> {
    if subjects.is_empty() {
        return Err(Error::config("n_subjects", "must be at least 1"));
    }
    if spec.repeats == 0 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    spec.offsets.validate()?;
    for v in variants {
        v.config.validate()?;
    }

    let trials: Vec<(usize, u32)> = (0..subjects.len())
        .flat_map(|s| (0..spec.repeats).map(move |r| (s, r)))
        .collect();

    let outcomes: Vec<Vec<std::result::Result<TrialTrace, TrialFailure>>> = trials
        .par_iter()
        .map(|&(s, repeat)| {
            let subject = &subjects[s];
            let mut base = TrialRng::seed_from_u64(subject.seed);
            base.set_stream(repeat as u64);
            let start = spec.offsets.start(subject.threshold, &mut base);
            variants
                .iter()
                .map(|v| run_trial(subject, repeat, v, start, spec.n_steps, base.clone()))
                .collect()
        })
        .collect();

    let mut per_variant: Vec<VariantTraces> = variants
        .iter()
        .map(|v| VariantTraces {
            label: v.label.clone(),
            traces: Vec::with_capacity(trials.len()),
        })
        .collect();
    let mut failures = Vec::new();
    for row in outcomes {
        for (k, outcome) in row.into_iter().enumerate() {
            match outcome {
                Ok(t) => per_variant[k].traces.push(t),
                Err(f) => failures.push(f),
            }
        }
    }
    Ok(BatchResult {
        subjects,
        variants: per_variant,
        failures,
    })
}

fn run_trial(
    subject: &VirtualSubject,
    repeat: u32,
    variant: &VariantSpec,
    start: Option<f64>,
    n_steps: usize,
    mut rng: TrialRng,
) -> std::result::Result<TrialTrace, TrialFailure> {
    let mut config = variant.config;
    if start.is_some() {
        config.x_start = start;
    }
    let mut responder = *subject;
    run_with_rng(&config, &mut responder, n_steps, &mut rng)
        .map(|mut t| {
            t.variant = variant.label.clone();
            t.subject = Some(subject.id);
            t.repeat = repeat;
            t.seed = subject.seed;
            t.stream = repeat as u64;
            t
        })
        .map_err(|e| TrialFailure {
            variant: variant.label.clone(),
            subject: subject.id,
            repeat,
            message: e.to_string(),
        })
}
