//! The `flowlab` command line.
//!
//! Exit status: 0 on success, 1 when a validation check fails (or a run
//! errors), 2 for configuration and usage errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowlab_core::geometry::{covering_curve, dimension_estimate};
use flowlab_core::metrics::tv_monte_carlo;
use flowlab_core::sampler::run_reverse_with;
use flowlab_core::schedule::{Coefficient, Schedule, ScheduleParams, DEFAULT_C0, DEFAULT_C1};
use flowlab_core::score_models::{perturb, ExactScore, PerturbationKind, PerturbationSpec};
use flowlab_core::targets::MixtureTarget;
use flowlab_core::validation::suite::{all_passed, run_suite, SuiteConfig};

use crate::config::{ConfigError, ExperimentConfig, Family, TargetSpec};
use crate::io::{read_points, read_samples, write_samples, write_schedule, TrajectoryWriter};
use crate::plot::emit_plots;
use crate::sweep::{read_rows, run_sweep, OutputPaths, SweepOptions};

#[derive(Debug, Parser)]
#[command(name = "flowlab", version, about = "Probability flow ODE sampler experiments")]
pub struct Cli {
    /// Experiment configuration (TOML, or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for sweep output and figures.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the sampler seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the noise schedule as CSV.
    Schedule(ScheduleArgs),
    /// Inspect a target distribution.
    Target {
        #[command(subcommand)]
        action: TargetAction,
    },
    /// Run the reverse sampler and write the final points with their densities.
    Sample(SampleArgs),
    /// Estimate TV between a sample file and the target at t = 1.
    Tv(TvArgs),
    /// Covering numbers of a point cloud.
    Dim(DimArgs),
    /// Run the numerical checks of the analytic identities and bounds.
    Validate,
    /// Run (or resume) the configured sweep.
    Sweep,
    /// Draw figures from a runs file.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of steps (defaults to the first configured horizon).
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Selects a target: a configuration file, or a family name together with
/// `--d`/`--k`.
#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Configuration file whose [target] table is used, or a family name.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TargetAction {
    /// Component table as CSV.
    Dump {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value = "star")]
    pub coeff: String,
    #[command(flatten)]
    pub target: TargetArgs,
    /// `kind:delta` or `kind:delta:seed`, e.g. `tangential:0.03`.
    #[arg(long)]
    pub perturb: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every intermediate batch to this CSV.
    #[arg(long)]
    pub dump_trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TvArgs {
    /// Output of `flowlab sample`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long = "T")]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Args)]
pub struct DimArgs {
    /// CSV with one point per row.
    #[arg(long)]
    pub points: PathBuf,
    /// Strictly decreasing radii.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eps: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Runs file (defaults to the configured one under --out-dir).
    #[arg(long)]
    pub runs: Option<PathBuf>,
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<ConfigError>().is_some() { 2 } else { 1 })
        }
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Runs a parsed command; `Ok(false)` means a validation check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let config = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    match &cli.command {
        Command::Schedule(args) => {
            let steps = args
                .steps
                .or_else(|| config.as_ref().and_then(|c| c.schedule.steps.first().copied()))
                .ok_or_else(|| config_error("--T is required without a configured horizon"))?;
            let schedule = build_schedule(config.as_ref(), steps, args.c0, args.c1)?;
            write_schedule(output(args.out.as_deref())?, &schedule)?;
        }
        Command::Target { action: TargetAction::Dump { target, out } } => {
            let (spec, k) = resolve_target(config.as_ref(), target, cli.seed)?;
            dump_target(output(out.as_deref())?, &spec.build(k)?)?;
        }
        Command::Sample(args) => sample(cli, config.as_ref(), args)?,
        Command::Tv(args) => {
            let (spec, k) = resolve_target(config.as_ref(), &args.target, None)?;
            let target = spec.build(k)?;
            let steps = horizon(config.as_ref(), args.steps)?;
            let schedule = build_schedule(config.as_ref(), steps, None, None)?;
            let file = File::open(&args.samples).with_context(|| format!("opening {}", args.samples.display()))?;
            let batch = read_samples(file, 1)?;
            let est = tv_monte_carlo(&batch, &target, &schedule)?;
            println!("tv,stderr,n_used,n_flagged");
            println!("{},{},{},{}", est.value, est.stderr, est.n_used, est.n_flagged);
        }
        Command::Dim(args) => {
            let file = File::open(&args.points).with_context(|| format!("opening {}", args.points.display()))?;
            let points = read_points(file)?;
            let curve = covering_curve(&points, &args.eps).map_err(|e| config_error(e.to_string()))?;
            let mut out = output(None)?;
            writeln!(out, "epsilon,net_size,lower_bound")?;
            for ((e, n), lb) in curve.epsilons.iter().zip(curve.counts()).zip(curve.lower_counts()) {
                writeln!(out, "{e},{n},{lb}")?;
            }
            out.flush()?;
            if curve.epsilons.len() >= 2 {
                eprintln!("k_hat = {}", dimension_estimate(&curve)?.k_hat);
            }
        }
        Command::Validate => {
            let suite = SuiteConfig { seed: cli.seed.unwrap_or(0), ..SuiteConfig::default() };
            let rows = run_suite(&suite)?;
            let mut out = output(None)?;
            writeln!(out, "check,trials,failures,max_slack")?;
            for r in &rows {
                writeln!(out, "{},{},{},{}", r.check, r.trials, r.failures, r.min_slack)?;
            }
            out.flush()?;
            for r in rows.iter().filter(|r| !r.passed()) {
                eprintln!("{} failed: {}", r.check, r.first_failure.as_deref().unwrap_or("no detail"));
            }
            return Ok(all_passed(&rows));
        }
        Command::Sweep => {
            let mut config = config.ok_or_else(|| config_error("sweep needs --config"))?;
            if let Some(seed) = cli.seed {
                config.sampler.seed = seed;
            }
            let options = SweepOptions { threads: cli.threads, ..SweepOptions::default() };
            let report = run_sweep(&config, &cli.out_dir, &options, |row| {
                eprintln!(
                    "run {:>4}  T={:<5} k={:<3} {:<6} {:<13} δ={:<6} tv={} [{}] {} ms",
                    row.run_id,
                    row.steps,
                    row.k_nominal,
                    row.coeff,
                    row.kind,
                    row.delta,
                    row.tv.map_or("-".into(), |v| format!("{v:.5}")),
                    row.status,
                    row.wall_ms
                );
            })?;
            let paths = OutputPaths::new(&config, &cli.out_dir);
            eprintln!("{} rows in {}", report.rows.len(), paths.runs.display());
            if !report.rows.is_empty() {
                if let Err(e) = emit_plots(&report.rows, &paths.plots) {
                    eprintln!("plots skipped: {e:#}");
                }
            }
        }
        Command::Plot(args) => {
            let paths = config.as_ref().map(|c| OutputPaths::new(c, &cli.out_dir));
            let runs = args
                .runs
                .clone()
                .or_else(|| paths.as_ref().map(|p| p.runs.clone()))
                .unwrap_or_else(|| cli.out_dir.join("runs.csv"));
            let dir = paths.map_or_else(|| cli.out_dir.join("plots"), |p| p.plots);
            let rows = read_rows(&runs)?;
            for path in emit_plots(&rows, &dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(true)
}

fn horizon(config: Option<&ExperimentConfig>, steps: Option<usize>) -> Result<usize> {
    steps
        .or_else(|| config.and_then(|c| c.schedule.steps.first().copied()))
        .ok_or_else(|| config_error("--T is required without a configured horizon"))
}

fn build_schedule(config: Option<&ExperimentConfig>, steps: usize, c0: Option<f64>, c1: Option<f64>) -> Result<Schedule> {
    let c0 = c0.or(config.map(|c| c.schedule.c0)).unwrap_or(DEFAULT_C0);
    let c1 = c1.or(config.map(|c| c.schedule.c1)).unwrap_or(DEFAULT_C1);
    let params = ScheduleParams::new(steps, c0, c1).map_err(|e| config_error(e.to_string()))?;
    Ok(Schedule::build(params)?)
}

/// Target spec from `--target` (file or family name), falling back to the
/// global configuration. Returns the spec and the grid value of `k`.
fn resolve_target(config: Option<&ExperimentConfig>, args: &TargetArgs, seed: Option<u64>) -> Result<(TargetSpec, usize)> {
    let mut spec = match args.target.as_deref() {
        Some(name) if !Path::new(name).exists() => {
            let family = Family::parse(name).ok_or_else(|| config_error(format!("{name:?} is neither a file nor a target family")))?;
            let d = args.d.ok_or_else(|| config_error("--d is required with a target family"))?;
            TargetSpec {
                family,
                d,
                k: vec![args.k.unwrap_or(1)],
                seed: seed.unwrap_or(0),
                scale: 1.0,
                support_radius: None,
                cloud_n: 256,
            }
        }
        Some(path) => ExperimentConfig::load(Path::new(path))?.target,
        None => config.ok_or_else(|| config_error("no target: pass --target or --config"))?.target.clone(),
    };
    if let Some(d) = args.d {
        if d != spec.d {
            return Err(config_error(format!("--d {d} disagrees with the target dimension {}", spec.d)));
        }
    }
    let k = match args.k {
        Some(k) => {
            if spec.family.uses_k() && (k == 0 || k > spec.d) {
                return Err(config_error(format!("--k must lie in 1..={}", spec.d)));
            }
            spec.k = vec![k];
            k
        }
        None => spec.k.first().copied().unwrap_or(1),
    };
    Ok((spec, k))
}

fn parse_perturbation(text: &str, default_seed: u64) -> Result<PerturbationSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || config_error(format!("--perturb expects kind:delta[:seed], got {text:?}"));
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let kind = PerturbationKind::parse(parts[0]).ok_or_else(|| config_error(format!("unknown perturbation kind {:?}", parts[0])))?;
    let delta: f64 = parts[1].parse().map_err(|_| bad())?;
    let seed = match parts.get(2) {
        Some(s) => s.parse().map_err(|_| bad())?,
        None => default_seed,
    };
    PerturbationSpec::new(kind, delta, seed).map_err(|e| config_error(e.to_string()))
}

fn sample(cli: &Cli, config: Option<&ExperimentConfig>, args: &SampleArgs) -> Result<()> {
    let (spec, k) = resolve_target(config, &args.target, None)?;
    let target = spec.build(k)?;
    let steps = horizon(config, args.steps)?;
    let schedule = build_schedule(config, steps, None, None)?;
    let coeff = Coefficient::parse(&args.coeff).ok_or_else(|| config_error(format!("unknown coefficient {:?}", args.coeff)))?;
    let pert_seed = config.map_or(0, |c| c.perturbation.seed);
    let spec = match &args.perturb {
        Some(text) => parse_perturbation(text, pert_seed)?,
        None => PerturbationSpec::none(),
    };
    if args.n == 0 {
        return Err(config_error("--n must be ≥ 1"));
    }
    let seed = cli.seed.or(config.map(|c| c.sampler.seed)).unwrap_or(0);
    let field = perturb(ExactScore::new(&target, &schedule), spec);

    let mut trajectory = args
        .dump_trajectory
        .as_deref()
        .map(|p| File::create(p).map(|f| TrajectoryWriter::new(BufWriter::new(f))).with_context(|| format!("creating {}", p.display())))
        .transpose()?;
    let mut dump_error = None;
    let run = run_reverse_with(&schedule, target.dim(), &field, args.n, seed, coeff, |batch| {
        if let Some(w) = trajectory.as_mut() {
            if dump_error.is_none() {
                dump_error = w.write(batch).err();
            }
        }
    })?;
    if let Some(e) = dump_error {
        return Err(e.context("writing trajectory"));
    }
    if let Some(w) = trajectory {
        w.finish()?;
    }
    write_samples(output(args.out.as_deref())?, &run.batch)?;
    if run.flagged_count() > 0 {
        eprintln!("{} of {} points flagged as near-singular", run.flagged_count(), args.n);
    }
    Ok(())
}

fn dump_target<W: Write>(writer: W, target: &MixtureTarget) -> Result<()> {
    let d = target.dim();
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["component", "weight", "rank", "covariance_trace"].map(String::from).to_vec();
    header.extend((0..d).map(|i| format!("mean_{i}")));
    csv.write_record(&header)?;
    for (i, c) in target.components().iter().enumerate() {
        let mut rec = vec![i.to_string(), c.weight.to_string(), c.rank().to_string(), c.covariance_trace().to_string()];
        rec.extend(c.mean.iter().map(f64::to_string));
        csv.write_record(&rec)?;
    }
    csv.flush().map_err(|e| anyhow!(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_flag_forms() {
        let p = parse_perturbation("tangential:0.03", 9).unwrap();
        assert_eq!((p.kind, p.delta, p.seed), (PerturbationKind::Tangential, 0.03, 9));
        assert_eq!(parse_perturbation("gain:0.1:4", 9).unwrap().seed, 4);
        for bad in ["gain", "gain:x", "warp:0.1", "gain:-1", "gain:1:2:3"] {
            let e = parse_perturbation(bad, 0).unwrap_err();
            assert!(e.downcast_ref::<ConfigError>().is_some(), "{bad}");
        }
    }

    #[test]
    fn family_shorthand_needs_a_dimension() {
        let args = TargetArgs { target: Some("point_mass".into()), d: None, k: None };
        assert!(resolve_target(None, &args, None).is_err());
        let args = TargetArgs { target: Some("rank_k_gaussian".into()), d: Some(6), k: Some(2) };
        let (spec, k) = resolve_target(None, &args, Some(3)).unwrap();
        assert_eq!((spec.family, spec.d, k, spec.seed), (Family::RankKGaussian, 6, 2, 3));
    }
}
