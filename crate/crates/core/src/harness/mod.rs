//! Monte-Carlo experiments over virtual populations.

pub mod batch;
pub mod config;
pub mod export;
pub mod stats;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use batch::{run_batch, run_batch_on, sample_population, BatchResult, BatchSpec, OffsetSpec, VariantSpec};
pub use config::{ExperimentConfig, VariantEntry};
pub use export::{export_results, read_stats_csv, write_stats_csv, Summary};
pub use stats::{compute_stats, RunStats, StepStats};
pub use sweep::{sweep_parameters, SweepResult, SweepSpec};

use crate::error::Result;
use crate::subject::read_population;

/// Everything produced by one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub batch: BatchResult,
    pub stats: Vec<RunStats>,
    pub sweeps: Vec<SweepResult>,
    pub summary: Summary,
}

impl ExperimentOutput {
    pub fn stats(&self, label: &str) -> Option<&RunStats> {
        self.stats.iter().find(|s| s.variant == label)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        export_results(dir, &self.stats, &self.sweeps, &self.summary)
    }
}

/// Run the batch (and sweeps, if configured) described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let variants = cfg.variant_specs()?;
    let spec = cfg.batch_spec();
    let batch = match &cfg.population_file {
        Some(path) => run_batch_on(read_population(path)?, &variants, &spec)?,
        None => run_batch(&cfg.population, &variants, &spec)?,
    };

    let mut stats = Vec::with_capacity(variants.len());
    for v in &batch.variants {
        if !v.traces.is_empty() {
            stats.push(compute_stats(&v.label, &v.traces)?);
        }
    }

    let mut sweeps = Vec::new();
    if let Some(sweep) = &cfg.sweep {
        for v in &variants {
            sweeps.push(sweep_parameters(&v.label, &v.config, &cfg.population, sweep)?);
        }
    }

    let summary = Summary {
        seed: cfg.seed,
        n_subjects: batch.subjects.len(),
        repeats: cfg.repeats,
        n_steps: cfg.n_steps,
        config: serde_json::to_value(cfg).expect("config serializes"),
        variants: batch
            .variants
            .iter()
            .map(|v| export::VariantSummary {
                label: v.label.clone(),
                n_trials: v.traces.len(),
                failures: batch.failures.iter().filter(|f| f.variant == v.label).count(),
                final_step: stats
                    .iter()
                    .find(|s| s.variant == v.label)
                    .and_then(|s| s.steps.last().copied()),
            })
            .collect(),
        sweeps: sweeps.iter().map(export::SweepSummary::from).collect(),
    };
    Ok(ExperimentOutput {
        batch,
        stats,
        sweeps,
        summary,
    })
}
