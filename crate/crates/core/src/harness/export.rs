//! Tables, summary document and plot series.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::stats::{RunStats, StepStats};
use crate::harness::sweep::SweepResult;

pub const STATS_FILE: &str = "stats.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep_samples.csv";
pub const FIG1A_FILE: &str = "fig1a_optimal_s.csv";
pub const FIG1B_FILE: &str = "fig1b_optimal_c.csv";
pub const FIG2A_FILE: &str = "fig2a_box.csv";
pub const FIG2B_FILE: &str = "fig2b_median_abs.csv";
pub const FIG2C_FILE: &str = "fig2c_outlier_pct.csv";

pub const STATS_COLUMNS: [&str; 9] = [
    "variant",
    "step",
    "median",
    "q1",
    "q3",
    "lo_adj",
    "hi_adj",
    "outlier_frac",
    "median_abs",
];

/// Header comment of the statistics table.
pub const QUANTILE_NOTE: &str = "# quantiles are lower nearest-rank order statistics v[floor(p*(n-1))] (median = lower median); \
fences q1 - 1.5*iqr and q3 + 1.5*iqr; lo_adj/hi_adj are the extreme data points inside the fences; values are dx = x_i - x_t";

const TRIALS_PREFIX: &str = "# trials ";

/// Everything besides the tables that describes a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub n_subjects: usize,
    pub repeats: u32,
    pub n_steps: usize,
    /// Free-form description of the run configuration.
    pub config: serde_json::Value,
    pub variants: Vec<VariantSummary>,
    pub sweeps: Vec<SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    pub n_trials: usize,
    pub failures: usize,
    pub final_step: Option<StepStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub variant: String,
    pub eval_step: usize,
    pub keep_fraction: f64,
    /// `(Δx_0, s*, c*)` per bucket.
    pub optima: Vec<(f64, f64, Option<f64>)>,
}

impl From<&SweepResult> for SweepSummary {
    fn from(r: &SweepResult) -> Self {
        SweepSummary {
            variant: r.variant.clone(),
            eval_step: r.eval_step,
            keep_fraction: r.keep_fraction,
            optima: r.buckets.iter().map(|b| (b.offset, b.optimum_s, b.optimum_c)).collect(),
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per variant and step, preceded by comment lines.
pub fn write_stats_csv(path: &Path, stats: &[RunStats]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "{QUANTILE_NOTE}").map_err(|e| Error::io(path, e))?;
    for s in stats {
        writeln!(file, "{TRIALS_PREFIX}{}={}", s.variant, s.n_trials).map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(STATS_COLUMNS).map_err(|e| csv_err(path, e))?;
    for s in stats {
        for st in &s.steps {
            w.write_record([
                s.variant.clone(),
                st.step.to_string(),
                num(st.median),
                num(st.q1),
                num(st.q3),
                num(st.lo_adj),
                num(st.hi_adj),
                num(st.outlier_frac),
                num(st.median_abs),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a table written by [`write_stats_csv`].
pub fn read_stats_csv(path: &Path) -> Result<Vec<RunStats>> {
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<RunStats> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix(TRIALS_PREFIX) {
            let (label, n) = rest.rsplit_once('=').ok_or_else(|| format(format!("bad trials line `{line}`")))?;
            let n = n.parse().map_err(|_| format(format!("bad trial count `{n}`")))?;
            out.push(RunStats {
                variant: label.to_string(),
                n_trials: n,
                steps: Vec::new(),
            });
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(STATS_COLUMNS) {
        return Err(format(format!("unexpected columns {header:?}")));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| format(format!("bad number `{}` in column {}", &rec[k], STATS_COLUMNS[k])))
        };
        let step = StepStats {
            step: rec[1].parse().map_err(|_| format(format!("bad step `{}`", &rec[1])))?,
            median: f(2)?,
            q1: f(3)?,
            q3: f(4)?,
            lo_adj: f(5)?,
            hi_adj: f(6)?,
            outlier_frac: f(7)?,
            median_abs: f(8)?,
        };
        let label = &rec[0];
        let entry = match out.iter_mut().position(|s| s.variant == label) {
            Some(k) => &mut out[k],
            None => {
                out.push(RunStats {
                    variant: label.to_string(),
                    n_trials: 0,
                    steps: Vec::new(),
                });
                out.last_mut().expect("just pushed")
            }
        };
        entry.steps.push(step);
    }
    Ok(out)
}

fn wide_by_step(stats: &[RunStats], value: impl Fn(&StepStats) -> f64) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["step".to_string()];
    header.extend(stats.iter().map(|s| s.variant.clone()));
    let n = stats.iter().map(|s| s.steps.len()).max().unwrap_or(0);
    let rows = (1..=n)
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(stats.iter().map(|s| opt(s.at(i).map(&value))));
            row
        })
        .collect();
    (header, rows)
}

fn wide_by_offset(sweeps: &[SweepResult], value: impl Fn(f64, Option<f64>) -> Option<f64>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["offset".to_string()];
    header.extend(sweeps.iter().map(|s| s.variant.clone()));
    let mut offsets: Vec<f64> = sweeps.iter().flat_map(|s| s.buckets.iter().map(|b| b.offset)).collect();
    offsets.sort_by(f64::total_cmp);
    offsets.dedup();
    let rows = offsets
        .iter()
        .map(|&o| {
            let mut row = vec![num(o)];
            row.extend(sweeps.iter().map(|s| {
                opt(s
                    .buckets
                    .iter()
                    .find(|b| b.offset == o)
                    .and_then(|b| value(b.optimum_s, b.optimum_c)))
            }));
            row
        })
        .collect();
    (header, rows)
}

/// Write every output file into `dir`, returning their paths.
pub fn export_results(dir: &Path, stats: &[RunStats], sweeps: &[SweepResult], summary: &Summary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join(STATS_FILE);
    write_stats_csv(&path, stats)?;
    written.push(path);

    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let box_header: Vec<String> = ["variant", "step", "lo_adj", "q1", "median", "q3", "hi_adj"]
        .map(String::from)
        .to_vec();
    let box_rows: Vec<Vec<String>> = stats
        .iter()
        .flat_map(|s| {
            s.steps.iter().map(|st| {
                vec![
                    s.variant.clone(),
                    st.step.to_string(),
                    num(st.lo_adj),
                    num(st.q1),
                    num(st.median),
                    num(st.q3),
                    num(st.hi_adj),
                ]
            })
        })
        .collect();
    let path = dir.join(FIG2A_FILE);
    write_rows(&path, &box_header, &box_rows)?;
    written.push(path);

    let (h, rows) = wide_by_step(stats, |s| s.median_abs);
    let path = dir.join(FIG2B_FILE);
    write_rows(&path, &h, &rows)?;
    written.push(path);

    let (h, rows) = wide_by_step(stats, |s| 100.0 * s.outlier_frac);
    let path = dir.join(FIG2C_FILE);
    write_rows(&path, &h, &rows)?;
    written.push(path);

    if !sweeps.is_empty() {
        let header: Vec<String> = ["variant", "offset", "s", "c", "error"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = sweeps
            .iter()
            .flat_map(|r| {
                r.buckets.iter().flat_map(move |b| {
                    b.samples
                        .iter()
                        .map(move |s| vec![r.variant.clone(), num(b.offset), num(s.s), opt(s.c), num(s.error)])
                })
            })
            .collect();
        let path = dir.join(SWEEP_FILE);
        write_rows(&path, &header, &rows)?;
        written.push(path);

        let (h, rows) = wide_by_offset(sweeps, |s, _| Some(s));
        let path = dir.join(FIG1A_FILE);
        write_rows(&path, &h, &rows)?;
        written.push(path);

        let with_c: Vec<SweepResult> = sweeps
            .iter()
            .filter(|s| s.buckets.iter().any(|b| b.optimum_c.is_some()))
            .cloned()
            .collect();
        let (h, rows) = wide_by_offset(&with_c, |_, c| c);
        let path = dir.join(FIG1B_FILE);
        write_rows(&path, &h, &rows)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> Vec<RunStats> {
        vec![
            RunStats {
                variant: "ACS".into(),
                n_trials: 3,
                steps: vec![
                    StepStats {
                        step: 1,
                        median: -0.1,
                        q1: -2.0 / 3.0,
                        q3: 1e-17,
                        lo_adj: -4.0,
                        hi_adj: 2.5,
                        outlier_frac: 0.125,
                        median_abs: 0.3,
                    },
                    StepStats {
                        step: 2,
                        median: 0.0,
                        q1: 0.0,
                        q3: 0.0,
                        lo_adj: 0.0,
                        hi_adj: 0.0,
                        outlier_frac: 0.0,
                        median_abs: 0.0,
                    },
                ],
            },
            RunStats {
                variant: "ACS-PI".into(),
                n_trials: 8000,
                steps: vec![],
            },
        ]
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = stats();
        write_stats_csv(&path, &s).unwrap();
        assert_eq!(read_stats_csv(&path).unwrap(), s);
    }

    #[test]
    fn schema_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_stats_csv(&path, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# quantiles are lower nearest-rank"));
        assert_eq!(lines[1], "variant,step,median,q1,q3,lo_adj,hi_adj,outlier_frac,median_abs");
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_stats_csv(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn io_errors_carry_path() {
        let err = write_stats_csv(Path::new("/nonexistent-dir/x.csv"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"), "{err}");
    }

    #[test]
    fn export_writes_all_series() {
        let dir = tempfile::tempdir().unwrap();
        let summary = Summary {
            seed: 1,
            n_subjects: 1,
            repeats: 1,
            n_steps: 1,
            config: serde_json::Value::Null,
            variants: vec![],
            sweeps: vec![],
        };
        let files = export_results(dir.path(), &stats(), &[], &summary).unwrap();
        assert_eq!(files.len(), 5);
        let fig2b = fs::read_to_string(dir.path().join(FIG2B_FILE)).unwrap();
        assert_eq!(fig2b.lines().next().unwrap(), "step,ACS,ACS-PI");
        assert_eq!(fig2b.lines().nth(1).unwrap(), "1,0.3,");
    }
}
