//! Per-step order statistics of `Δx_i` across trials.
//!
//! Quantiles use the lower nearest rank: `q(p) = v[floor(p (n - 1))]` of
//! the sorted sample, so the median is the lower median and every reported
//! value is an attained data point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TrialTrace;

/// Fence multiplier on the interquartile range.
pub const FENCE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Smallest value at or above `q1 - 1.5 IQR`.
    pub lo_adj: f64,
    /// Largest value at or below `q3 + 1.5 IQR`.
    pub hi_adj: f64,
    /// Fraction of trials outside the fences.
    pub outlier_frac: f64,
    /// Median of `|Δx_i|`.
    pub median_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub variant: String,
    pub n_trials: usize,
    pub steps: Vec<StepStats>,
}

impl RunStats {
    /// Statistics of 1-based step `i`.
    pub fn at(&self, i: usize) -> Option<&StepStats> {
        self.steps.get(i.checked_sub(1)?)
    }
}

/// `v[floor(p (n - 1))]` of an ascending, non-empty slice.
pub fn lower_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p * (sorted.len() - 1) as f64).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Statistics of one sample.
pub fn summarize(step: usize, values: &[f64]) -> StepStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = lower_quantile(&v, 0.25);
    let median = lower_quantile(&v, 0.5);
    let q3 = lower_quantile(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - FENCE_FACTOR * iqr, q3 + FENCE_FACTOR * iqr);
    let lo_adj = *v.iter().find(|&&x| x >= lo_fence).expect("q1 is inside");
    let hi_adj = *v.iter().rev().find(|&&x| x <= hi_fence).expect("q3 is inside");
    let outliers = v.iter().filter(|&&x| x < lo_fence || x > hi_fence).count();
    let mut abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    abs.sort_by(f64::total_cmp);
    StepStats {
        step,
        median,
        q1,
        q3,
        lo_adj,
        hi_adj,
        outlier_frac: outliers as f64 / v.len() as f64,
        median_abs: lower_quantile(&abs, 0.5),
    }
}

/// Per-step statistics of `Δx_i` over equally long traces.
pub fn compute_stats(variant: &str, traces: &[TrialTrace]) -> Result<RunStats> {
    let first = traces
        .first()
        .ok_or_else(|| Error::config("traces", "at least one trace is required"))?;
    let len = first.records.len();
    if let Some(t) = traces.iter().find(|t| t.records.len() != len) {
        return Err(Error::RaggedTraces {
            expected: len,
            actual: t.records.len(),
        });
    }
    let mut steps = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(traces.len());
    for i in 0..len {
        column.clear();
        for t in traces {
            let dx = t.records[i]
                .dx
                .ok_or_else(|| Error::config("traces", "Δx is unknown for a trace without a true threshold"))?;
            column.push(dx);
        }
        steps.push(summarize(i + 1, &column));
    }
    Ok(RunStats {
        variant: variant.to_string(),
        n_trials: traces.len(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::StepRecord;
    use proptest::prelude::*;

    fn trace(dx: &[f64]) -> TrialTrace {
        TrialTrace {
            records: dx
                .iter()
                .enumerate()
                .map(|(i, &d)| StepRecord {
                    step: i + 1,
                    x: 50.0 + d,
                    dx: Some(d),
                    observation: None,
                    equivalent_step: None,
                    clamped: false,
                })
                .collect(),
            ..TrialTrace::default()
        }
    }

    #[test]
    fn symmetric_three_points() {
        let s = summarize(1, &[-1.0, 0.0, 1.0]);
        assert_eq!(s.median, 0.0);
        assert_eq!(s.outlier_frac, 0.0);
        assert_eq!((s.lo_adj, s.hi_adj), (-1.0, 1.0));
    }

    #[test]
    fn zero_iqr_flags_outlier() {
        let s = summarize(1, &[0.0, 0.0, 100.0, 0.0, 0.0]);
        assert_eq!((s.q1, s.median, s.q3), (0.0, 0.0, 0.0));
        assert_eq!(s.outlier_frac, 0.2);
        assert_eq!(s.hi_adj, 0.0);
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert_eq!(lower_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_eq!(lower_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
        assert_eq!(lower_quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn constant_traces() {
        let traces: Vec<_> = (0..5).map(|_| trace(&[2.5, 2.5, 2.5])).collect();
        let stats = compute_stats("c", &traces).unwrap();
        for s in &stats.steps {
            assert_eq!((s.median, s.q1, s.q3, s.lo_adj, s.hi_adj, s.median_abs), (2.5, 2.5, 2.5, 2.5, 2.5, 2.5));
            assert_eq!(s.outlier_frac, 0.0);
        }
        assert_eq!(stats.n_trials, 5);
    }

    #[test]
    fn ragged_and_empty_rejected() {
        assert!(matches!(
            compute_stats("x", &[trace(&[1.0, 2.0]), trace(&[1.0])]),
            Err(Error::RaggedTraces { expected: 2, actual: 1 })
        ));
        assert!(compute_stats("x", &[]).is_err());
    }

    proptest! {
        #[test]
        fn invariants(values in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let s = summarize(1, &values);
            prop_assert!(s.q1 <= s.median && s.median <= s.q3);
            prop_assert!((0.0..=1.0).contains(&s.outlier_frac));
            prop_assert!(values.contains(&s.lo_adj) && values.contains(&s.hi_adj));
            prop_assert!(s.lo_adj <= s.q1 && s.hi_adj >= s.q3);
            prop_assert!(s.median_abs >= 0.0);
        }
    }
}
