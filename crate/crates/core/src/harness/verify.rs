//! Invariant suite behind the `verify` subcommand.
//!
//! Each check reports a value and the band it must fall in. Informational
//! rows carry no band; skipped rows do not apply to the configured system.

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepJob, SystemSpec};
use super::output::{sha256_hex, Cell, OutputDir, Table};
use super::run::{sweep_table, RunSummary};
use super::HarnessError;
use crate::baseline::{fisher_comparison, PixelArraySpec};
use crate::estimation::{crb_variance, fisher_information, working_branch, BranchEstimator};
use crate::model::{
    contrast_firstorder, kraus_amplitude, outcome_probabilities_exact, ProbabilityMode,
    WeakMeasurementModel,
};
use crate::montecarlo::{derive_seed, mean_and_std, run_trials, NoiseSpec, SourceSpec, SweepKind};
use crate::optics::shel_contrast;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Info,
    Skip,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
            Status::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub status: Status,
}

impl Check {
    fn bounded(name: &'static str, value: f64, lower: f64, upper: f64) -> Self {
        let ok = value >= lower && value <= upper;
        Self {
            name,
            value,
            lower,
            upper,
            status: if ok { Status::Pass } else { Status::Fail },
        }
    }

    fn info(name: &'static str, value: f64) -> Self {
        Self {
            name,
            value,
            lower: f64::NAN,
            upper: f64::NAN,
            status: Status::Info,
        }
    }

    fn skip(name: &'static str) -> Self {
        Self {
            status: Status::Skip,
            ..Self::info(name, f64::NAN)
        }
    }
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

fn ctx(what: &'static str) -> impl Fn(crate::Error) -> HarnessError {
    move |e| HarnessError::model(what, e)
}

fn max_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

fn crb_identity(model: &WeakMeasurementModel) -> Result<Check, HarnessError> {
    let sigma = model.meter.sigma();
    let thetas = logspace(1e-3, 1.5, 40);
    let ratios = logspace(1e-4, 0.3, 25);
    let gaps = ratios
        .par_iter()
        .flat_map_iter(|&a| thetas.iter().map(move |&t| (a, t)))
        .map(|(a, t)| {
            let m = WeakMeasurementModel::angle_family(a * sigma, sigma)?;
            Ok(crb_variance(t, &m, 1000, ProbabilityMode::Exact)?.relative_gap())
        })
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("crb identity"))?;
    Ok(Check::bounded(
        "crb_identity_gap",
        max_of(gaps.into_iter()),
        0.0,
        1e-12,
    ))
}

fn closed_form(system: &SystemSpec, model: &WeakMeasurementModel) -> Result<Check, HarnessError> {
    let SystemSpec::Setup(setup) = system else {
        return Ok(Check::skip("closed_form_composition"));
    };
    let mut worst = 0.0f64;
    for k in 0..=600 {
        let theta = -0.3 + 0.6 * k as f64 / 600.0;
        if theta.abs() < 1e-9 {
            continue;
        }
        let a = shel_contrast(theta, setup).map_err(ctx("closed form"))?;
        let b = contrast_firstorder(theta, model).map_err(ctx("closed form"))?;
        worst = worst.max((a - b).abs());
    }
    Ok(Check::bounded("closed_form_composition", worst, 0.0, 1e-12))
}

fn kraus_oracle(model: &WeakMeasurementModel) -> Check {
    let g = model.coupling;
    let r = model.meter.split_range();
    let mut worst = 0.0f64;
    for i in 0..=40 {
        let theta = -1.5 + 3.0 * i as f64 / 40.0;
        for j in 0..=40 {
            let u = -r + 2.0 * r * j as f64 / 40.0;
            let m = kraus_amplitude(u, theta, model).norm_sqr();
            worst = worst.max((m - (theta + g * u).sin().powi(2)).abs());
        }
    }
    Check::bounded("kraus_amplitude_oracle", worst, 0.0, 1e-12)
}

fn firstorder_agreement(model: &WeakMeasurementModel) -> Result<Check, HarnessError> {
    let a = model.coupling_ratio().abs();
    // |a cot θ| <= 1/2 and sin²θ >= 10 a²
    let lo = (2.0 * a).atan().max((10f64.sqrt() * a).min(1.0).asin());
    if a == 0.0 || lo >= 1.5 {
        return Ok(Check::skip("firstorder_relative_error"));
    }
    let grid = logspace(lo, 1.5, 100);
    let errs = grid
        .par_iter()
        .flat_map_iter(|&t| [t, -t])
        .map(|t| {
            let exact = outcome_probabilities_exact(t, model)?.contrast();
            let first = contrast_firstorder(t, model)?;
            Ok(((exact - first) / first).abs())
        })
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("first-order agreement"))?;
    Ok(Check::bounded(
        "firstorder_relative_error",
        max_of(errs.into_iter()),
        0.0,
        0.01,
    ))
}

const PRECISION_PHOTONS: u64 = 50_000;

fn precision(model: &WeakMeasurementModel, seed: u64) -> Result<Vec<Check>, HarnessError> {
    let crb_std = |t: f64| -> crate::Result<f64> {
        Ok(crb_variance(t, model, PRECISION_PHOTONS, ProbabilityMode::Exact)?.crb_std())
    };
    let band = logspace(0.002, 0.3, 200)
        .par_iter()
        .map(|&t| crb_std(t))
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("precision band"))?;
    let global = logspace(1e-6, 1.5, 200)
        .par_iter()
        .map(|&t| crb_std(t))
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("precision band"))?;
    let min = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
    let mut checks = vec![
        Check::bounded("min_crb_std_working_range", min(band), 1e-5, 2e-4),
        Check::info("min_crb_std_all_angles", min(global)),
    ];

    let theta = 0.01;
    let Some(branch) = working_branch(theta, model, ProbabilityMode::Exact) else {
        checks.push(Check::skip("mc_std_over_crb_std"));
        return Ok(checks);
    };
    let stats = run_trials(
        theta,
        model,
        SourceSpec::FixedN(PRECISION_PHOTONS),
        NoiseSpec::default(),
        1.0,
        1000,
        seed,
    )
    .map_err(ctx("crb tracking"))?;
    let est =
        BranchEstimator::new(model, branch, ProbabilityMode::Exact).map_err(ctx("crb tracking"))?;
    let hats = stats
        .records
        .par_iter()
        .map(|r| est.estimate(r).map(|e| e.theta_hat))
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("crb tracking"))?;
    let (_, std) = mean_and_std(&hats);
    let bound = crb_std(theta).map_err(ctx("crb tracking"))?;
    checks.push(Check::bounded("mc_std_over_crb_std", std / bound, 0.9, 1.1));
    Ok(checks)
}

fn contrast_noise(model: &WeakMeasurementModel, seed: u64) -> Result<Vec<Check>, HarnessError> {
    let mut out = Vec::new();
    for (k, (n, target, name)) in [
        (500u64, 0.0447, "contrast_std_n500"),
        (1500, 0.0258, "contrast_std_n1500"),
    ]
    .into_iter()
    .enumerate()
    {
        let s = run_trials(
            0.1,
            model,
            SourceSpec::FixedN(n),
            NoiseSpec::default(),
            1.0,
            1000,
            derive_seed(seed, k as u64),
        )
        .map_err(ctx("contrast noise"))?;
        out.push(Check::bounded(
            name,
            s.std_contrast,
            0.9 * target,
            1.1 * target,
        ));
    }
    Ok(out)
}

fn integration_time(model: &WeakMeasurementModel, seed: u64) -> Result<Check, HarnessError> {
    let std_at = |window: f64, k: u64| {
        run_trials(
            0.01,
            model,
            SourceSpec::PostRate(50_000.0),
            NoiseSpec::default(),
            window,
            100,
            derive_seed(seed, k),
        )
        .map(|s| s.std_contrast)
        .map_err(ctx("integration time"))
    };
    let ratio = std_at(10.0, 0)? / std_at(1000.0, 1)?;
    Ok(Check::bounded("std_ratio_10ms_1000ms", ratio, 7.5, 12.5))
}

fn data_processing(model: &WeakMeasurementModel) -> Result<Vec<Check>, HarnessError> {
    let thetas = logspace(1e-4, 0.3, 13);
    let counts = [2usize, 16, 256];
    let comps = thetas
        .par_iter()
        .flat_map_iter(|&t| counts.iter().map(move |&n| (t, n)))
        .map(|(t, n)| {
            Ok((
                n,
                fisher_comparison(t, model, &PixelArraySpec::covering(model, n))?,
            ))
        })
        .collect::<crate::Result<Vec<_>>>()
        .map_err(ctx("data processing"))?;
    let excess = max_of(
        comps
            .iter()
            .filter(|(n, _)| *n > 2)
            .map(|(_, c)| (c.twobin - c.pixels) / c.pixels),
    );
    let two = max_of(
        comps
            .iter()
            .filter(|(n, _)| *n == 2)
            .map(|(_, c)| (c.ratio - 1.0).abs()),
    );

    let search = logspace(1e-6, 0.3, 61);
    let fisher = search
        .par_iter()
        .map(|&t| fisher_information(t, model, ProbabilityMode::Exact))
        .collect::<crate::Result<Vec<f64>>>()
        .map_err(ctx("optimal working point"))?;
    let best = fisher
        .iter()
        .enumerate()
        .fold(0, |b, (i, f)| if *f > fisher[b] { i } else { b });
    let fine = PixelArraySpec::covering(model, 256);
    let at_best =
        fisher_comparison(search[best], model, &fine).map_err(ctx("optimal working point"))?;
    let at_001 = fisher_comparison(0.01, model, &fine).map_err(ctx("optimal working point"))?;
    Ok(vec![
        Check::bounded("pixel_fisher_excess", excess, f64::NEG_INFINITY, 1e-9),
        Check::bounded("two_pixel_ratio_error", two, 0.0, 1e-6),
        Check::info("optimal_theta", search[best]),
        Check::bounded("ratio_at_optimum_256px", at_best.ratio, 0.5, 1.0 + 1e-9),
        Check::info("ratio_at_0.01_256px", at_001.ratio),
    ])
}

fn determinism(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
) -> Result<Check, HarnessError> {
    let job = SweepJob {
        name: "determinism".into(),
        kind: SweepKind::Theta,
        grid: (0..=20).map(|k| -0.1 + 0.01 * k as f64).collect(),
        source: SourceSpec::PostRate(50_000.0),
        window_ms: 10.0,
        trials: 10,
    };
    let mut digests = Vec::new();
    for threads in [1, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::Runtime(format!("thread pool: {e}")))?;
        let bytes = pool.install(|| sweep_table(cfg, model, &job))?.to_csv()?;
        digests.push(sha256_hex(&bytes));
    }
    digests.sort();
    digests.dedup();
    Ok(Check::bounded(
        "distinct_csv_over_threads",
        digests.len() as f64,
        1.0,
        1.0,
    ))
}

/// Runs every check against the configured system.
pub fn run_checks(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
) -> Result<Vec<Check>, HarnessError> {
    let seed = cfg.master_seed;
    let mut checks = vec![
        crb_identity(model)?,
        closed_form(&cfg.system, model)?,
        kraus_oracle(model),
        firstorder_agreement(model)?,
    ];
    checks.extend(precision(model, derive_seed(seed, 4))?);
    checks.extend(contrast_noise(model, derive_seed(seed, 5))?);
    checks.push(integration_time(model, derive_seed(seed, 6))?);
    checks.extend(data_processing(model)?);
    checks.push(determinism(cfg, model)?);
    Ok(checks)
}

pub(crate) fn run_verify(
    cfg: &ExperimentConfig,
    model: &WeakMeasurementModel,
    dir: &mut OutputDir,
    summary: &mut RunSummary,
) -> Result<(), HarnessError> {
    let checks = run_checks(cfg, model)?;
    let mut table = Table::new(&["check", "status", "value", "lower", "upper"]);
    for c in &checks {
        table.push(vec![
            Cell::Text(c.name.into()),
            Cell::Text(c.status.label().into()),
            Cell::Num(c.value),
            Cell::Num(c.lower),
            Cell::Num(c.upper),
        ]);
        let band = if c.status == Status::Pass || c.status == Status::Fail {
            format!(" in [{:.3e}, {:.3e}]", c.lower, c.upper)
        } else {
            String::new()
        };
        summary.lines.push(format!(
            "{} {} = {:.6e}{band}",
            c.status.label(),
            c.name,
            c.value
        ));
    }
    summary.files.push(dir.write_table("verify.csv", &table)?);
    summary.failed_checks = checks.iter().filter(|c| c.status == Status::Fail).count();
    Ok(())
}
