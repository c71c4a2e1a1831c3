use std::path::PathBuf;

use rayon::prelude::*;

use super::config::{parse_config, ExperimentConfig, SweepJob};
use super::output::{Cell, OutputDir, Plot, Series, Style, Table};
use super::{verify, HarnessError};
use crate::baseline::{compare_ensembles, fisher_comparison, PixelArraySpec};
use crate::error::Error;
use crate::estimation::{crb_variance, sensitivity, working_branch, BranchEstimator};
use crate::model::{
    contrast_firstorder, outcome_probabilities, outcome_probabilities_exact, WeakMeasurementModel,
};
use crate::montecarlo::{derive_seed, simulate_window, sweep_point, SweepKind, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sweep,
    Fisher,
    Simulate,
    CompareBaseline,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::Fisher => "fisher",
            Command::Simulate => "simulate",
            Command::CompareBaseline => "compare-baseline",
            Command::Verify => "verify",
        }
    }
}

/// Command-line overrides of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: Vec<PathBuf>,
    /// Human-readable report lines.
    pub lines: Vec<String>,
    /// Failed `verify` checks; the run itself succeeded.
    pub failed_checks: usize,
}

/// Parses `config_text`, runs `command` and writes its artifacts. Work is
/// spread over the current rayon pool; files are written in grid order.
pub fn execute(
    command: Command,
    config_text: &str,
    options: &RunOptions,
) -> Result<RunSummary, HarnessError> {
    let mut cfg = parse_config(config_text)?;
    if let Some(seed) = options.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &options.out {
        cfg.output = out.clone();
    }
    let model = cfg.model().map_err(|e| HarnessError::model("model", e))?;
    let mut dir = OutputDir::create(&cfg.output)?;
    let mut summary = RunSummary {
        output: cfg.output.clone(),
        ..RunSummary::default()
    };

    let outcome = match command {
        Command::Sweep => run_sweeps(&cfg, &model, &mut dir, &mut summary),
        Command::Fisher => run_fisher(&cfg, &model, &mut dir, &mut summary),
        Command::Simulate => run_simulate(&cfg, &model, &mut dir, &mut summary),
        Command::CompareBaseline => run_baseline(&cfg, &model, &mut dir, &mut summary),
        Command::Verify => verify::run_verify(&cfg, &model, &mut dir, &mut summary),
    };
    outcome?;
    let manifest = dir.write_manifest(command.name(), config_text, cfg.master_seed, &cfg)?;
    summary.files.push(manifest);
    Ok(summary)
}

fn value_column(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Theta => "theta",
        SweepKind::NPhotons => "n_photons",
        SweepKind::Window => "window_ms",
    }
}

pub(crate) fn sweep_table(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    job: &SweepJob,
) -> Result<Table, HarnessError> {
    let settings = cfg.settings(job);
    let rows = job
        .grid
        .par_iter()
        .enumerate()
        .map(|(j, &v)| {
            sweep_point(j as u64, v, job.kind, model, &settings).map_err(|e| {
                HarnessError::model(
                    format!("{} point {j} ({} = {v})", job.name, value_column(job.kind)),
                    e,
                )
            })
        })
        .collect::<Result<Vec<SweepRow>, _>>()?;

    let mut header = SweepRow::HEADER.to_vec();
    header[0] = value_column(job.kind);
    let mut table = Table::new(&header);
    for r in rows {
        table.push(r.fields().into_iter().map(Cell::Num).collect());
    }
    Ok(table)
}

fn sweep_plot(job: &SweepJob, table: &Table) -> Plot {
    let col = |n: &str| table.column(n).unwrap_or_default();
    let x = col(value_column(job.kind));
    match job.kind {
        SweepKind::Theta => Plot {
            title: format!("{}: contrast vs post-selection angle", job.name),
            x_label: "theta (rad)".into(),
            y_label: "contrast".into(),
            log_x: false,
            log_y: false,
            series: vec![
                Series::new("exact", &x, &col("exact_contrast"), Style::Line),
                Series::new("simulated", &x, &col("mean_contrast"), Style::Markers),
            ],
        },
        _ => Plot {
            title: format!("{}: estimator spread", job.name),
            x_label: match job.kind {
                SweepKind::Window => "window (ms)".into(),
                _ => "photons per window".into(),
            },
            y_label: "standard deviation".into(),
            log_x: true,
            log_y: true,
            series: vec![
                Series::new("CRB std", &x, &col("crb_std"), Style::Line),
                Series::new("theta-hat std", &x, &col("theta_hat_std"), Style::Markers),
                Series::new("contrast std", &x, &col("std_contrast"), Style::Markers),
            ],
        },
    }
}

fn run_sweeps(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    dir: &mut OutputDir,
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    for job in &cfg.sweeps {
        let table = sweep_table(cfg, model, job)?;
        summary
            .files
            .push(dir.write_table(&format!("{}.csv", job.name), &table)?);
        let svg = sweep_plot(job, &table).render();
        summary
            .files
            .push(dir.write(&format!("{}.svg", job.name), svg.as_bytes())?);
        summary.lines.push(format!(
            "{}: {} points x {} trials",
            job.name,
            job.grid.len(),
            job.trials
        ));
    }
    Ok(())
}

fn nan_on_singular(r: crate::Result<f64>) -> crate::Result<f64> {
    match r {
        Err(Error::AngleSingularity { .. }) | Err(Error::DegenerateOutcome { .. }) => Ok(f64::NAN),
        other => other,
    }
}

fn fisher_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.sweeps
        .iter()
        .find(|j| j.kind == SweepKind::Theta)
        .map(|j| j.grid.clone())
        .unwrap_or_else(|| {
            (0..=60)
                .map(|k| (1e-4f64.ln() + (0.3f64.ln() - 1e-4f64.ln()) * k as f64 / 60.0).exp())
                .collect()
        })
}

fn run_fisher(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    dir: &mut OutputDir,
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    let n_total = cfg
        .source
        .expected_photons(cfg.window_ms, &cfg.noise)
        .round()
        .max(1.0) as u64;
    let grid = fisher_grid(cfg);
    let rows = grid
        .par_iter()
        .map(|&theta| {
            let ctx = |e| HarnessError::model(format!("fisher at theta = {theta}"), e);
            let probs = outcome_probabilities(theta, model, cfg.mode).map_err(ctx)?;
            let exact = outcome_probabilities_exact(theta, model).map_err(ctx)?;
            let first = nan_on_singular(contrast_firstorder(theta, model)).map_err(ctx)?;
            let slope = nan_on_singular(sensitivity(theta, model, cfg.mode)).map_err(ctx)?;
            let (fisher, crb_std) = match crb_variance(theta, model, n_total, cfg.mode) {
                Ok(c) => (c.fisher, c.crb_std()),
                Err(Error::AngleSingularity { .. }) | Err(Error::DegenerateOutcome { .. }) => {
                    (f64::NAN, f64::NAN)
                }
                Err(e) => return Err(ctx(e)),
            };
            Ok(vec![
                Cell::Num(theta),
                Cell::Num(probs.p_plus),
                Cell::Num(exact.contrast()),
                Cell::Num(first),
                Cell::Num(slope),
                Cell::Num(fisher),
                Cell::Int(n_total),
                Cell::Num(crb_std),
            ])
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let mut table = Table::new(&[
        "theta",
        "p_plus",
        "exact_contrast",
        "firstorder_contrast",
        "sensitivity",
        "fisher",
        "n_total",
        "crb_std",
    ]);
    rows.into_iter().for_each(|r| table.push(r));
    summary.files.push(dir.write_table("fisher.csv", &table)?);

    let positive = grid.iter().all(|&t| t > 0.0);
    let wide = positive && grid.iter().cloned().fold(0.0, f64::max) > 100.0 * grid[0];
    let plot = Plot {
        title: "Fisher information per post-selected photon".into(),
        x_label: "theta (rad)".into(),
        y_label: "Fisher information".into(),
        log_x: wide,
        log_y: true,
        series: vec![Series::new(
            "two-bin pointer",
            &grid,
            &table.column("fisher").unwrap_or_default(),
            Style::Line,
        )],
    };
    summary
        .files
        .push(dir.write("fisher.svg", plot.render().as_bytes())?);
    summary
        .lines
        .push(format!("fisher: {} angles, N = {n_total}", grid.len()));
    Ok(())
}

fn branch_for(cfg: &ExperimentConfig, model: &WeakMeasurementModel) -> Option<(f64, f64)> {
    match cfg.interval {
        Some((lo, hi)) if cfg.theta >= lo && cfg.theta <= hi => Some((lo, hi)),
        Some(_) => None,
        None => working_branch(cfg.theta, model, cfg.mode),
    }
}

fn run_simulate(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    dir: &mut OutputDir,
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    let record = simulate_window(
        cfg.theta,
        model,
        cfg.source,
        cfg.noise,
        cfg.window_ms,
        cfg.master_seed,
    )
    .map_err(|e| HarnessError::model("simulate", e))?;

    let report = match branch_for(cfg, model) {
        Some(b) if record.total() > 0 => Some(
            BranchEstimator::new(model, b, cfg.mode)
                .and_then(|est| est.estimate(&record))
                .map_err(|e| HarnessError::model("estimate", e))?,
        ),
        _ => None,
    };
    let (theta_hat, std_theta, saturated) = report.map_or((f64::NAN, f64::NAN, false), |r| {
        (r.theta_hat, r.std_theta, r.saturated)
    });

    let mut table = Table::new(&[
        "theta_true",
        "window_ms",
        "seed",
        "n_plus",
        "n_minus",
        "contrast",
        "theta_hat",
        "std_theta",
        "saturated",
    ]);
    table.push(vec![
        Cell::Num(record.theta_true),
        Cell::Num(record.window_ms),
        Cell::Int(record.seed),
        Cell::Int(record.n_plus),
        Cell::Int(record.n_minus),
        Cell::Num(record.contrast().unwrap_or(f64::NAN)),
        Cell::Num(theta_hat),
        Cell::Num(std_theta),
        Cell::Text(saturated.to_string()),
    ]);
    summary.files.push(dir.write_table("simulate.csv", &table)?);
    summary.lines.push(format!(
        "N+ = {}, N- = {}, contrast = {:.6}, theta_hat = {:.6e} +/- {:.2e}",
        record.n_plus,
        record.n_minus,
        record.contrast().unwrap_or(f64::NAN),
        theta_hat,
        std_theta
    ));
    Ok(())
}

fn run_baseline(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    dir: &mut OutputDir,
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    let b = &cfg.baseline;
    let detector = |n: usize| PixelArraySpec {
        read_noise_sigma: b.read_noise_sigma,
        ..PixelArraySpec::covering(model, n)
    };

    let pairs: Vec<(f64, usize)> = b
        .thetas
        .iter()
        .flat_map(|&t| b.pixels.iter().map(move |&n| (t, n)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(theta, n)| {
            fisher_comparison(theta, model, &detector(n))
                .map(|c| (theta, n, c))
                .map_err(|e| {
                    HarnessError::model(
                        format!("fisher comparison at theta = {theta}, {n} pixels"),
                        e,
                    )
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut fisher_table = Table::new(&[
        "theta",
        "pixels",
        "fisher_twobin",
        "fisher_pixels",
        "ratio",
        "excluded_pixels",
    ]);
    for (theta, n, c) in &rows {
        fisher_table.push(vec![
            Cell::Num(*theta),
            Cell::Int(*n as u64),
            Cell::Num(c.twobin),
            Cell::Num(c.pixels),
            Cell::Num(c.ratio),
            Cell::Int(c.excluded_pixels as u64),
        ]);
    }
    summary
        .files
        .push(dir.write_table("baseline_fisher.csv", &fisher_table)?);

    let series = b
        .pixels
        .iter()
        .map(|&n| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.1 == n)
                .map(|(t, _, c)| (*t, c.ratio))
                .unzip();
            Series::new(&format!("{n} pixels"), &xs, &ys, Style::Line)
        })
        .collect();
    let plot = Plot {
        title: "two-bin / pixel Fisher information".into(),
        x_label: "theta (rad)".into(),
        y_label: "ratio".into(),
        log_x: b.thetas.iter().all(|&t| t > 0.0),
        log_y: false,
        series,
    };
    summary
        .files
        .push(dir.write("baseline_fisher.svg", plot.render().as_bytes())?);

    let branch = branch_for(cfg, model).ok_or_else(|| {
        HarnessError::Runtime(format!(
            "no monotonic estimator branch contains theta = {}",
            cfg.theta
        ))
    })?;
    let mut ensemble = Table::new(&[
        "pixels",
        "n_photons",
        "trials",
        "twobin_mean",
        "twobin_std",
        "centroid_mean",
        "centroid_std",
        "std_ratio",
    ]);
    for (k, &n) in b.pixels.iter().enumerate() {
        let c = compare_ensembles(
            cfg.theta,
            model,
            &detector(n),
            b.n_photons,
            b.trials,
            derive_seed(cfg.master_seed, k as u64),
            branch,
        )
        .map_err(|e| HarnessError::model(format!("ensemble with {n} pixels"), e))?;
        ensemble.push(vec![
            Cell::Int(n as u64),
            Cell::Int(b.n_photons),
            Cell::Int(b.trials as u64),
            Cell::Num(c.twobin_mean),
            Cell::Num(c.twobin_std),
            Cell::Num(c.centroid_mean),
            Cell::Num(c.centroid_std),
            Cell::Num(c.ratio),
        ]);
        summary.lines.push(format!(
            "{n:>4} pixels: two-bin std {:.3e}, centroid std {:.3e}",
            c.twobin_std, c.centroid_std
        ));
    }
    summary
        .files
        .push(dir.write_table("baseline_ensemble.csv", &ensemble)?);
    Ok(())
}
