//! Per-trial traces.

use serde::{Deserialize, Serialize};

use crate::sequence::Observation;

/// One row of a trace: the iterate `x_i` and what was observed there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub x: f64,
    /// `x_i - x_t`, when the true root is known.
    pub dx: Option<f64>,
    /// `None` on the final row, where no stimulus was given.
    pub observation: Option<Observation>,
    /// Equivalent standard-form step of the update leaving `x_i`.
    pub equivalent_step: Option<f64>,
    /// Whether the update leaving `x_i` was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialTrace {
    pub variant: String,
    pub subject: Option<u64>,
    pub repeat: u32,
    pub seed: u64,
    pub stream: u64,
    /// `n_steps + 1` rows, for `i = 1..=n_steps + 1`.
    pub records: Vec<StepRecord>,
}

impl TrialTrace {
    pub fn n_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// `Δx_i` for 1-based `i`.
    pub fn dx(&self, i: usize) -> Option<f64> {
        self.records.get(i.checked_sub(1)?)?.dx
    }

    pub fn final_x(&self) -> Option<f64> {
        self.records.last().map(|r| r.x)
    }

    /// CSV table of the records; the `dx` column is left out when
    /// `with_dx` is false.
    pub fn to_csv(&self, with_dx: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = TRACE_COLUMNS.iter().copied().filter(|c| with_dx || *c != "dx").collect();
        w.write_record(&header).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.step.to_string(), r.x.to_string()];
            if with_dx {
                row.push(opt(r.dx));
            }
            row.push(r.observation.map(|o| o.to_string()).unwrap_or_default());
            row.push(opt(r.equivalent_step));
            row.push(r.clamped.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("utf-8")
    }
}

pub const TRACE_COLUMNS: [&str; 6] = ["step", "x", "dx", "observation", "equivalent_step", "clamped"];
