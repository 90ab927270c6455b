//! Grid sweeps over `(T, k, coefficient, perturbation, δ)`.
//!
//! Rows are appended to `runs.csv` in grid order through a single writer, so
//! the file always holds a prefix of the grid. Rerunning a sweep with the
//! same configuration skips that prefix, which makes an interrupted sweep
//! resumable.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use flowlab_core::geometry::{covering_curve, dimension_estimate};
use flowlab_core::linalg::Vector;
use flowlab_core::metrics::{rate_fit, tv_monte_carlo, TvEstimate};
use flowlab_core::rng::{derive_seed, ids};
use flowlab_core::sampler::{run_reverse, TrajectoryBatch};
use flowlab_core::schedule::{Coefficient, Schedule, ScheduleParams};
use flowlab_core::score_models::{average_errors, perturb, ExactScore, PerturbationKind, PerturbationSpec};
use flowlab_core::targets::MixtureTarget;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const RUN_COLUMNS: [&str; 17] = [
    "run_id",
    "T",
    "d",
    "k_nominal",
    "k_hat",
    "coeff",
    "kind",
    "delta",
    "eps_score",
    "eps_jacobi",
    "tv",
    "tv_stderr",
    "n_flagged",
    "seed",
    "config_hash",
    "status",
    "wall_ms",
];

/// One grid point's result. Measured fields are empty when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub d: usize,
    pub k_nominal: usize,
    pub k_hat: Option<f64>,
    pub coeff: String,
    pub kind: String,
    pub delta: f64,
    pub eps_score: Option<f64>,
    pub eps_jacobi: Option<f64>,
    pub tv: Option<f64>,
    pub tv_stderr: Option<f64>,
    /// Flagged points among all `sampler.n` trajectories.
    pub n_flagged: Option<usize>,
    /// Seed of the reverse run; shared by every row with the same `T`.
    pub seed: u64,
    pub config_hash: String,
    pub status: String,
    pub wall_ms: u64,
}

impl RunRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn tv_estimate(&self) -> Option<TvEstimate> {
        Some(TvEstimate { value: self.tv?, stderr: self.tv_stderr?, n_used: 0, n_flagged: self.n_flagged? })
    }

    /// The CSV line without `wall_ms`, the one column allowed to differ
    /// between reruns.
    pub fn reproducible_part(&self) -> RunRow {
        RunRow { wall_ms: 0, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub run_id: usize,
    pub steps: usize,
    /// Grid value of `k` (see `TargetSpec::k_grid`).
    pub k: usize,
    pub coeff: Coefficient,
    pub kind: PerturbationKind,
    pub delta: f64,
}

/// The sweep grid in run_id order: `T` outermost, then `k`, coefficient,
/// perturbation kind and `δ`. The unperturbed kind contributes one point
/// with `δ = 0`.
pub fn grid(config: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let coeffs = config.coefficients()?;
    let kinds = config.kinds()?;
    let mut out = Vec::new();
    for &steps in &config.schedule.steps {
        for k in config.target.k_grid() {
            for &coeff in &coeffs {
                for &kind in &kinds {
                    let deltas: &[f64] = if kind == PerturbationKind::None { &[0.0] } else { &config.perturbation.deltas };
                    for &delta in deltas {
                        out.push(GridPoint { run_id: out.len(), steps, k, coeff, kind, delta });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Seed of the reverse run at horizon `T`. Independent of `k`, `δ` and the
/// coefficient so those comparisons use common random numbers.
pub fn run_seed(config: &ExperimentConfig, steps: usize) -> u64 {
    derive_seed(config.sampler.seed, steps as u64)
}

/// A target built for one grid value of `k`, with its covering-slope
/// dimension estimate.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub k: usize,
    pub target: MixtureTarget,
    pub k_hat: f64,
}

pub fn prepare_target(config: &ExperimentConfig, k: usize) -> Result<PreparedTarget> {
    let target = config.target.build(k)?;
    let atoms = target.components().iter().all(|c| c.rank() == 0);
    let cloud: Vec<Vector> = if atoms {
        target.components().iter().map(|c| c.mean.clone()).collect()
    } else {
        target.sample_data(config.geometry.n, derive_seed(config.target.seed, ids::DATA))
    };
    let curve = covering_curve(&cloud, &config.geometry.eps)?;
    let k_hat = dimension_estimate(&curve)?.k_hat;
    Ok(PreparedTarget { k, target, k_hat })
}

struct Measured {
    eps_score: f64,
    eps_jacobi: f64,
    tv: TvEstimate,
    n_flagged: usize,
}

fn measure(config: &ExperimentConfig, target: &MixtureTarget, point: &GridPoint) -> Result<Measured> {
    let s = &config.schedule;
    let schedule = Schedule::build(ScheduleParams::new(point.steps, s.c0, s.c1)?)?;
    let exact = ExactScore::new(target, &schedule);
    let spec = PerturbationSpec::new(point.kind, point.delta, config.perturbation.seed)?;
    let field = perturb(exact, spec);
    let seed = run_seed(config, point.steps);
    let run = run_reverse(&schedule, target.dim(), &field, config.sampler.n, seed, point.coeff)?;

    let m = config.tv.n;
    let head = TrajectoryBatch::from_parts(
        1,
        run.batch.points()[..m].to_vec(),
        run.batch.log_density()[..m].to_vec(),
    )?;
    let tv = tv_monte_carlo(&head, target, &schedule)?;

    let (eps_score, eps_jacobi) = if point.kind == PerturbationKind::None || point.delta == 0.0 {
        (0.0, 0.0)
    } else {
        let errs = average_errors(
            &exact,
            &field,
            target,
            &schedule,
            config.tv.error_samples,
            derive_seed(seed, ids::ERROR_ESTIMATE),
        )?;
        (errs.eps_score, errs.eps_jacobi)
    };
    Ok(Measured { eps_score, eps_jacobi, tv, n_flagged: run.flagged_count() })
}

/// Runs one grid point. Failures are recorded in `status`, never propagated.
pub fn run_one(config: &ExperimentConfig, hash: &str, prepared: &PreparedTarget, point: &GridPoint) -> RunRow {
    let start = Instant::now();
    let measured = measure(config, &prepared.target, point);
    let wall_ms = start.elapsed().as_millis() as u64;
    let mut row = RunRow {
        run_id: point.run_id,
        steps: point.steps,
        d: config.target.d,
        k_nominal: config.target.nominal_k(point.k),
        k_hat: Some(prepared.k_hat),
        coeff: point.coeff.name().into(),
        kind: point.kind.name().into(),
        delta: point.delta,
        eps_score: None,
        eps_jacobi: None,
        tv: None,
        tv_stderr: None,
        n_flagged: None,
        seed: run_seed(config, point.steps),
        config_hash: hash.into(),
        status: "ok".into(),
        wall_ms,
    };
    match measured {
        Ok(m) => {
            row.eps_score = Some(m.eps_score);
            row.eps_jacobi = Some(m.eps_jacobi);
            row.tv = Some(m.tv.value);
            row.tv_stderr = Some(m.tv.stderr);
            row.n_flagged = Some(m.n_flagged);
        }
        Err(e) => row.status = format!("failed: {e:#}"),
    }
    row
}

/// Recomputes a row from the configuration alone.
pub fn rerun(config: &ExperimentConfig, run_id: usize) -> Result<RunRow> {
    let points = grid(config)?;
    let point = points.get(run_id).with_context(|| format!("run_id {run_id} outside the grid"))?;
    let prepared = prepare_target(config, point.k)?;
    Ok(run_one(config, &config.hash(), &prepared, point))
}

/// Least-squares rate over `T` for one `(d, k, coefficient, kind, δ)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub d: usize,
    pub k_nominal: usize,
    pub coeff: String,
    pub kind: String,
    pub delta: f64,
    /// Rows that entered the fit (successful and above resolution).
    pub n_points: usize,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Fits every group in order of first appearance; groups with fewer than
/// three usable horizons get empty fit fields.
pub fn fit_groups(rows: &[RunRow]) -> Vec<GroupFit> {
    let mut groups: Vec<(GroupFit, Vec<(f64, f64)>)> = Vec::new();
    for row in rows {
        let key = |g: &GroupFit| {
            g.d == row.d && g.k_nominal == row.k_nominal && g.coeff == row.coeff && g.kind == row.kind && g.delta == row.delta
        };
        let idx = match groups.iter().position(|(g, _)| key(g)) {
            Some(i) => i,
            None => {
                groups.push((
                    GroupFit {
                        d: row.d,
                        k_nominal: row.k_nominal,
                        coeff: row.coeff.clone(),
                        kind: row.kind.clone(),
                        delta: row.delta,
                        n_points: 0,
                        slope: None,
                        intercept: None,
                        r_squared: None,
                    },
                    Vec::new(),
                ));
                groups.len() - 1
            }
        };
        if let Some(est) = row.tv_estimate().filter(|e| row.ok() && !e.below_resolution()) {
            groups[idx].1.push((row.steps as f64, est.value));
        }
    }
    groups
        .into_iter()
        .map(|(mut g, pts)| {
            g.n_points = pts.len();
            if let Ok(fit) = rate_fit(&pts) {
                g.slope = Some(fit.slope);
                g.intercept = Some(fit.intercept);
                g.r_squared = Some(fit.r_squared);
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub rows: Vec<RunRow>,
    pub fits: Vec<GroupFit>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    /// Stop after this many newly computed rows (the rest are left for a
    /// later resume).
    pub max_new_rows: Option<usize>,
}

pub struct OutputPaths {
    pub runs: PathBuf,
    pub fits: PathBuf,
    pub plots: PathBuf,
}

impl OutputPaths {
    pub fn new(config: &ExperimentConfig, out_dir: &Path) -> Self {
        OutputPaths {
            runs: out_dir.join(&config.output.runs),
            fits: out_dir.join(&config.output.fits),
            plots: out_dir.join(&config.output.plots),
        }
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<RunRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RUN_COLUMNS) {
        bail!("{} does not have the run columns", path.display());
    }
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Loads the completed prefix of an existing runs file, dropping a trailing
/// partial line, and returns the rows with the byte length to keep.
fn completed_prefix(path: &Path, hash: &str) -> Result<(Vec<RunRow>, u64)> {
    let bytes = fs::read(path)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep == 0 {
        return Ok((Vec::new(), 0));
    }
    let mut reader = csv::Reader::from_reader(&bytes[..keep]);
    if reader.headers()?.iter().ne(RUN_COLUMNS) {
        bail!("{} exists but is not a runs file", path.display());
    }
    let mut rows: Vec<RunRow> = Vec::new();
    for (i, r) in reader.deserialize::<RunRow>().enumerate() {
        let row = r.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        if row.config_hash != hash {
            bail!(
                "{} was written for config {} (this config is {hash}); remove it or use another output directory",
                path.display(),
                row.config_hash
            );
        }
        if row.run_id != i {
            bail!("{} rows are out of order at run_id {}", path.display(), row.run_id);
        }
        rows.push(row);
    }
    Ok((rows, keep as u64))
}

fn write_fits(path: &Path, fits: &[GroupFit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if fits.is_empty() {
        w.write_record(["d", "k_nominal", "coeff", "kind", "delta", "n_points", "slope", "intercept", "r_squared"])?;
    }
    for f in fits {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

fn write_frames(targets: &[PreparedTarget], out_dir: &Path) -> Result<()> {
    for p in targets {
        if let Some(frame) = p.target.frame() {
            let mut w = csv::Writer::from_path(out_dir.join(format!("frame_k{}.csv", p.k)))?;
            for row in frame.row_iter() {
                w.write_record(row.iter().map(f64::to_string))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Runs (or resumes) the sweep, writing runs, fits and embedding frames
/// under `out_dir`. `on_row` sees each newly written row.
pub fn run_sweep(
    config: &ExperimentConfig,
    out_dir: &Path,
    options: &SweepOptions,
    mut on_row: impl FnMut(&RunRow),
) -> Result<ExperimentReport> {
    config.validate()?;
    let hash = config.hash();
    let paths = OutputPaths::new(config, out_dir);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let (mut rows, keep) = if paths.runs.exists() { completed_prefix(&paths.runs, &hash)? } else { (Vec::new(), 0) };
    let file = OpenOptions::new().create(true).append(true).open(&paths.runs)?;
    file.set_len(keep)?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    if keep == 0 {
        csv.write_record(RUN_COLUMNS)?;
        csv.flush()?;
    }

    let points = grid(config)?;
    let mut todo: Vec<GridPoint> = points.into_iter().skip(rows.len()).collect();
    if let Some(max) = options.max_new_rows {
        todo.truncate(max);
    }

    let mut ks: Vec<usize> = todo.iter().map(|p| p.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let prepared: Vec<PreparedTarget> = ks.iter().map(|&k| prepare_target(config, k)).collect::<Result<_>>()?;
    write_frames(&prepared, out_dir)?;
    let lookup = |k: usize| prepared.iter().find(|p| p.k == k).expect("prepared for every k");

    let threads = options
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, todo.len().max(1));
    let next = AtomicUsize::new(0);
    let cancel = AtomicBool::new(false);
    let mut write_error: Option<anyhow::Error> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, RunRow)>();
        for _ in 0..threads {
            let tx = tx.clone();
            let (todo, next, cancel, hash) = (&todo, &next, &cancel, &hash);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= todo.len() || cancel.load(Ordering::Relaxed) {
                    break;
                }
                let point = &todo[i];
                let row = run_one(config, hash, lookup(point.k), point);
                if tx.send((i, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // rows arrive in completion order and leave in grid order
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (i, row) in rx {
            pending.insert(i, row);
            while let Some(row) = pending.remove(&expected) {
                let written = csv.serialize(&row).and_then(|_| csv.flush().map_err(Into::into));
                if let Err(e) = written {
                    write_error = Some(e.into());
                    cancel.store(true, Ordering::Relaxed);
                    return;
                }
                on_row(&row);
                rows.push(row);
                expected += 1;
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.context(format!("writing {}", paths.runs.display())));
    }
    csv.into_inner().map_err(|e| e.into_error())?.flush()?;

    let fits = fit_groups(&rows);
    write_fits(&paths.fits, &fits)?;
    Ok(ExperimentReport { config_hash: hash, rows, fits })
}

/// Lines of a runs file with the trailing `wall_ms` field removed.
pub fn strip_wall_ms(csv_text: &str) -> Vec<String> {
    csv_text
        .lines()
        .map(|line| match line.rfind(',') {
            Some(i) => line[..i].to_string(),
            None => line.to_string(),
        })
        .collect()
}
