//! TOML experiment description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::belief::CDecay;
use crate::error::{Error, Result};
use crate::harness::batch::{BatchSpec, OffsetSpec, VariantSpec};
use crate::harness::sweep::SweepSpec;
use crate::prior::Prior;
use crate::sequence::Method;
use crate::subject::PopulationSpec;

/// Desk-scale population size.
pub const DESK_SUBJECTS: usize = 2_000;
pub const DESK_REPEATS: u32 = 4;
/// Full-scale population size of the original protocol.
pub const FULL_SUBJECTS: usize = 25_000;
pub const FULL_REPEATS: u32 = 24;

/// One variant: a named preset with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_decay: Option<CDecay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_start: Option<f64>,
}

impl From<Method> for VariantEntry {
    fn from(method: Method) -> Self {
        VariantEntry {
            method,
            label: None,
            s: None,
            c: None,
            gamma: None,
            c_decay: None,
            prior: None,
            x_start: None,
        }
    }
}

impl VariantEntry {
    pub fn to_spec(&self) -> Result<VariantSpec> {
        let mut config = self.method.config();
        config.s = self.s.unwrap_or(config.s);
        config.c = self.c.unwrap_or(config.c);
        config.gamma = self.gamma.unwrap_or(config.gamma);
        config.c_decay = self.c_decay.unwrap_or(config.c_decay);
        config.prior = self.prior.unwrap_or(config.prior);
        config.x_start = self.x_start.or(config.x_start);
        config.validate()?;
        Ok(VariantSpec {
            label: self.label.clone().unwrap_or_else(|| self.method.label().to_string()),
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub repeats: u32,
    pub n_steps: usize,
    pub offsets: OffsetSpec,
    pub population: PopulationSpec,
    /// Replay a stored population instead of sampling one.
    pub population_file: Option<PathBuf>,
    pub variants: Vec<VariantEntry>,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            n_subjects: DESK_SUBJECTS,
            repeats: DESK_REPEATS,
            n_steps: 30,
            offsets: OffsetSpec::default(),
            population: PopulationSpec::default(),
            population_file: None,
            variants: Method::ALL.into_iter().map(VariantEntry::from).collect(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.batch_spec().validate()?;
        self.population.validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        let specs = self.variant_specs()?;
        for (k, v) in specs.iter().enumerate() {
            if specs[..k].iter().any(|w| w.label == v.label) {
                return Err(Error::config("variants", format!("duplicate label `{}`", v.label)));
            }
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        Ok(())
    }

    pub fn variant_specs(&self) -> Result<Vec<VariantSpec>> {
        self.variants.iter().map(VariantEntry::to_spec).collect()
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            n_subjects: self.n_subjects,
            repeats: self.repeats,
            n_steps: self.n_steps,
            seed: self.seed,
            offsets: self.offsets,
        }
    }
}
