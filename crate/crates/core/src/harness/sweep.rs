//! Random `(s, c)` sweeps ranked by the error at a fixed step.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::batch::offset_start;
use crate::harness::stats::lower_quantile;
use crate::sequence::{run_with_rng, SequenceConfig, TrialRng, Variant};
use crate::subject::{sample_subject, PopulationSpec, Range};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// `Δx_0` buckets; each start is `x_t ± Δx_0`.
    pub offsets: Vec<f64>,
    pub n_candidates: usize,
    pub s_range: Range,
    /// Ignored by the standard variant.
    pub c_range: Range,
    pub trials_per_candidate: usize,
    pub keep_fraction: f64,
    /// Step whose `|Δx_i|` ranks the candidates.
    pub eval_step: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            offsets: (1..=10).map(|k| 10.0 * k as f64).collect(),
            n_candidates: 200,
            s_range: Range { min: 1.0, max: 40.0 },
            c_range: Range { min: 1.0, max: 60.0 },
            trials_per_candidate: 8,
            keep_fraction: 0.1,
            eval_step: 30,
            seed: 42,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.s_range.validate_positive("s_range")?;
        self.c_range.validate_positive("c_range")?;
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates", "must be at least 1"));
        }
        if self.trials_per_candidate == 0 {
            return Err(Error::config("trials_per_candidate", "must be at least 1"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::config("keep_fraction", "must lie in (0, 1]"));
        }
        if self.eval_step == 0 {
            return Err(Error::config("eval_step", "must be at least 1"));
        }
        if self.offsets.iter().any(|o| !(o.is_finite() && *o >= 0.0)) {
            return Err(Error::config("offsets", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub s: f64,
    pub c: Option<f64>,
    /// Median `|Δx_eval|` over the candidate's trials.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBucket {
    pub offset: f64,
    pub samples: Vec<SweepSample>,
    pub failures: usize,
    pub optimum_s: f64,
    pub optimum_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variant: String,
    pub keep_fraction: f64,
    pub eval_step: usize,
    pub buckets: Vec<SweepBucket>,
}

/// Mean `(s, c)` of the best `ceil(keep_fraction n)` samples, ties broken by
/// sample order.
pub fn select_optimum(samples: &[SweepSample], keep_fraction: f64) -> Option<(f64, Option<f64>)> {
    if samples.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].error.total_cmp(&samples[b].error).then(a.cmp(&b)));
    let keep = ((keep_fraction * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    let best = &order[..keep];
    let s = best.iter().map(|&k| samples[k].s).sum::<f64>() / keep as f64;
    let c = samples[best[0]]
        .c
        .map(|_| best.iter().map(|&k| samples[k].c.unwrap_or(f64::NAN)).sum::<f64>() / keep as f64);
    Some((s, c))
}

/// Sweep `(s, c)` for one variant over every `Δx_0` bucket.
pub fn sweep_parameters(
    label: &str,
    base: &SequenceConfig,
    pop: &PopulationSpec,
    spec: &SweepSpec,
) -> Result<SweepResult> {
    spec.validate()?;
    pop.validate()?;
    base.validate()?;
    let uses_c = base.variant != Variant::Standard;
    let mut buckets = Vec::with_capacity(spec.offsets.len());
    for (b, &offset) in spec.offsets.iter().enumerate() {
        let outcomes: Vec<Option<SweepSample>> = (0..spec.n_candidates)
            .into_par_iter()
            .map(|k| {
                let mut rng = TrialRng::seed_from_u64(spec.seed);
                rng.set_stream((b * spec.n_candidates + k) as u64);
                let mut config = *base;
                config.s = spec.s_range.sample(&mut rng);
                if uses_c {
                    config.c = spec.c_range.sample(&mut rng);
                }
                evaluate(&config, pop, offset, spec, &mut rng).map(|error| SweepSample {
                    s: config.s,
                    c: uses_c.then_some(config.c),
                    error,
                })
            })
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        let samples: Vec<SweepSample> = outcomes.into_iter().flatten().collect();
        let (optimum_s, optimum_c) =
            select_optimum(&samples, spec.keep_fraction).ok_or(Error::EmptySweep { failures })?;
        buckets.push(SweepBucket {
            offset,
            samples,
            failures,
            optimum_s,
            optimum_c,
        });
    }
    Ok(SweepResult {
        variant: label.to_string(),
        keep_fraction: spec.keep_fraction,
        eval_step: spec.eval_step,
        buckets,
    })
}

fn evaluate(config: &SequenceConfig, pop: &PopulationSpec, offset: f64, spec: &SweepSpec, rng: &mut TrialRng) -> Option<f64> {
    let mut errors = Vec::with_capacity(spec.trials_per_candidate);
    for t in 0..spec.trials_per_candidate {
        let mut subject = sample_subject(pop, t as u64, rng).ok()?;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut cfg = *config;
        cfg.x_start = Some(cfg.clamp(offset_start(subject.threshold, sign * offset)));
        let trace = run_with_rng(&cfg, &mut subject, spec.eval_step - 1, rng).ok()?;
        errors.push(trace.dx(spec.eval_step)?.abs());
    }
    errors.sort_by(f64::total_cmp);
    Some(lower_quantile(&errors, 0.5))
}
