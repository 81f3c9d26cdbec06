use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ibrm_core::harness::config::{DESK_REPEATS, DESK_SUBJECTS, FULL_REPEATS, FULL_SUBJECTS};
use ibrm_core::harness::export::{Summary, SweepSummary, STATS_FILE, SUMMARY_FILE};
use ibrm_core::harness::{
    export_results, read_stats_csv, run_experiment, sample_population, sweep_parameters, ExperimentConfig, RunStats,
    SweepSpec, VariantEntry,
};
use ibrm_core::subject::write_population;
use ibrm_core::Method;
use ibrm_service::ServeOptions;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ibrm", version, about = "Robbins-Monro threshold hunting: simulation and live sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo batch over a virtual population; writes tables and plot series.
    Run(RunArgs),
    /// Sweep (s, c) per initial offset and report the optima.
    Sweep(SweepArgs),
    /// Print a stats table written by `run`.
    Stats(StatsArgs),
    /// Regenerate plot series from a previous run directory.
    Export(ExportArgs),
    /// Sample a virtual population to JSONL.
    Population(PopulationArgs),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Full,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment description. Defaults apply to everything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Comma-separated variant labels, e.g. `ACS,ACSu`.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
}

impl ExperimentArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        match self.scale {
            Some(Scale::Desk) => (cfg.n_subjects, cfg.repeats) = (DESK_SUBJECTS, DESK_REPEATS),
            Some(Scale::Full) => (cfg.n_subjects, cfg.repeats) = (FULL_SUBJECTS, FULL_REPEATS),
            None => {}
        }
        if !self.variants.is_empty() {
            cfg.variants = self
                .variants
                .iter()
                .map(|name| select_variant(&cfg.variants, name))
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn select_variant(entries: &[VariantEntry], name: &str) -> Result<VariantEntry> {
    if let Some(e) = entries
        .iter()
        .find(|e| e.label.as_deref().is_some_and(|l| l.eq_ignore_ascii_case(name)))
    {
        return Ok(e.clone());
    }
    let method: Method = name.parse().with_context(|| format!("unknown variant `{name}`"))?;
    Ok(entries
        .iter()
        .find(|e| e.method == method && e.label.is_none())
        .cloned()
        .unwrap_or_else(|| method.into()))
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Subjects from a JSONL file instead of sampling.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long)]
    candidates: Option<usize>,
    /// Trials per candidate.
    #[arg(long)]
    trials: Option<usize>,
    /// Step at which |Δx| is scored.
    #[arg(long)]
    eval_step: Option<usize>,
    #[arg(long, default_value = "out/sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// A stats.csv file or the directory holding it.
    path: PathBuf,
    /// Only this step.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `run`.
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PopulationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DESK_SUBJECTS)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, default_value = "sessions")]
    data_dir: PathBuf,
    /// Require this bearer token on API routes.
    #[arg(long, env = "IBRM_TOKEN")]
    token: Option<String>,
    /// Serve the operator UI build from this directory.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn print_step(stats: &[RunStats], step: usize) {
    println!(
        "{:<14} {:>8} {:>6} {:>12} {:>10} {:>10}",
        "variant", "trials", "step", "median|dx|", "median dx", "outliers"
    );
    for s in stats {
        if let Some(last) = s.at(step) {
            println!(
                "{:<14} {:>8} {:>6} {:>12.4} {:>10.4} {:>9.2}%",
                s.variant,
                s.n_trials,
                last.step,
                last.median_abs,
                last.median,
                100.0 * last.outlier_frac
            );
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.experiment.build()?;
    if args.population.is_some() {
        cfg.population_file = args.population;
    }
    let started = Instant::now();
    let out = run_experiment(&cfg)?;
    eprintln!(
        "{} subjects x {} repeats x {} steps in {:.2?}",
        out.summary.n_subjects,
        cfg.repeats,
        cfg.n_steps,
        started.elapsed()
    );
    for f in out.batch.failures.iter().take(5) {
        eprintln!("warning: {f:?}");
    }
    if !out.batch.failures.is_empty() {
        eprintln!("warning: {} failed trials", out.batch.failures.len());
    }
    print_step(&out.stats, cfg.n_steps);
    print_written(&out.write(&args.out)?);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.experiment.build()?;
    let mut spec = cfg.sweep.clone().unwrap_or_else(|| SweepSpec {
        seed: cfg.seed,
        ..SweepSpec::default()
    });
    if let Some(n) = args.candidates {
        spec.n_candidates = n;
    }
    if let Some(n) = args.trials {
        spec.trials_per_candidate = n;
    }
    if let Some(n) = args.eval_step {
        spec.eval_step = n;
    }
    let mut results = Vec::new();
    for v in cfg.variant_specs()? {
        let r = sweep_parameters(&v.label, &v.config, &cfg.population, &spec)?;
        for b in &r.buckets {
            match b.optimum_c {
                Some(c) => println!("{:<10} dx0={:<6} s*={:.3} c*={:.3}", r.variant, b.offset, b.optimum_s, c),
                None => println!("{:<10} dx0={:<6} s*={:.3}", r.variant, b.offset, b.optimum_s),
            }
        }
        results.push(r);
    }
    let mut cfg = cfg;
    cfg.sweep = Some(spec);
    let summary = Summary {
        seed: cfg.seed,
        n_subjects: 0,
        repeats: 0,
        n_steps: cfg.n_steps,
        config: serde_json::to_value(&cfg)?,
        variants: Vec::new(),
        sweeps: results.iter().map(SweepSummary::from).collect(),
    };
    print_written(&export_results(&args.out, &[], &results, &summary)?);
    Ok(())
}

fn stats_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(STATS_FILE)
    } else {
        path.to_path_buf()
    }
}

fn stats(args: StatsArgs) -> Result<()> {
    let mut all = read_stats_csv(&stats_path(&args.path))?;
    if !args.variants.is_empty() {
        all.retain(|s| args.variants.iter().any(|v| v.eq_ignore_ascii_case(&s.variant)));
        if all.is_empty() {
            bail!("no matching variants in {}", args.path.display());
        }
    }
    println!(
        "{:<10} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9} {:>11}",
        "variant", "step", "median", "q1", "q3", "lo_adj", "hi_adj", "outliers", "median|dx|"
    );
    for s in &all {
        for st in s.steps.iter().filter(|st| args.step.is_none_or(|k| k == st.step)) {
            println!(
                "{:<10} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.2}% {:>11.4}",
                s.variant,
                st.step,
                st.median,
                st.q1,
                st.q3,
                st.lo_adj,
                st.hi_adj,
                100.0 * st.outlier_frac,
                st.median_abs
            );
        }
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let stats = read_stats_csv(&args.from.join(STATS_FILE))?;
    let path = args.from.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: Summary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    print_written(&export_results(&args.out, &stats, &[], &summary)?);
    Ok(())
}

fn population(args: PopulationArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let subjects = sample_population(&cfg.population, args.n, seed)?;
    write_population(&args.out, &subjects)?;
    println!("wrote {} subjects to {}", subjects.len(), args.out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let opts = ServeOptions {
        addr: SocketAddr::new(args.bind, args.port),
        data_dir: args.data_dir,
        token: args.token,
        ui_dir: args.ui_dir,
    };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(ibrm_service::serve(opts))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Stats(a) => stats(a),
        Command::Export(a) => export(a),
        Command::Population(a) => population(a),
        Command::Serve(a) => serve(a),
    }
}
