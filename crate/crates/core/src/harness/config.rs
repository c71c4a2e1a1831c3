//! TOML experiment configuration.
//!
//! ```toml
//! [setup]                 # or [model] with g and sigma
//! theta_i = "30deg"
//!
//! [sweep]
//! preset = "fig6"         # or kind = "theta" and grid = [...]
//!
//! [run]
//! master_seed = 7
//! ```
//!
//! Angles are radians when given as numbers and accept a `deg`, `°` or `rad`
//! suffix when given as strings.

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use crate::model::{ProbabilityMode, WeakMeasurementModel};
use crate::montecarlo::{NoiseSpec, SourceSpec, SweepKind, SweepSettings};
use crate::optics::{to_model, OpticalSetup};

pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_POST_RATE: f64 = 50_000.0;
pub const DEFAULT_WINDOW_MS: f64 = 10.0;
pub const DEFAULT_THETA: f64 = 0.01;
pub const PRESETS: [&str; 4] = ["fig3", "fig4", "fig5", "fig6"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error{}: {message}", location(.line, .key))]
    Parse {
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },
    #[error("invalid config: {key}: {message}")]
    Validation { key: String, message: String },
}

fn location(line: &Option<usize>, key: &Option<String>) -> String {
    match (line, key) {
        (Some(l), Some(k)) => format!(" at line {l} (key `{k}`)"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(k)) => format!(" (key `{k}`)"),
        (None, None) => String::new(),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parses `"30deg"`, `"30 °"`, `"0.5rad"`. A bare number string is rejected.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (number, to_rad) = if let Some(v) = t.strip_suffix("deg") {
        (v, true)
    } else if let Some(v) = t.strip_suffix('°') {
        (v, true)
    } else if let Some(v) = t.strip_suffix("rad") {
        (v, false)
    } else {
        return Err(format!("angle `{text}` needs a unit suffix (deg, °, rad)"));
    };
    let v: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("cannot read angle `{text}`"))?;
    Ok(if to_rad { v.to_radians() } else { v })
}

/// A number, or a string carrying an angle unit.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Quantity {
    value: f64,
    angular: bool,
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or an angle string such as \"30deg\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Quantity, E> {
                Ok(Quantity {
                    value: v,
                    angular: false,
                })
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Quantity, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Quantity, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Quantity, E> {
                parse_angle(v)
                    .map(|value| Quantity {
                        value,
                        angular: true,
                    })
                    .map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum GridSpec {
    List(Vec<Quantity>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeSpec {
    start: Quantity,
    stop: Quantity,
    points: usize,
    #[serde(default)]
    log: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum IntervalSpec {
    Named(String),
    Bounds([Quantity; 2]),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetup {
    wavelength: Option<f64>,
    theta_i: Option<Quantity>,
    n: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    g: f64,
    sigma: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    preset: Option<String>,
    kind: Option<String>,
    grid: Option<GridSpec>,
    theta: Option<Quantity>,
    window: Option<f64>,
    interval: Option<IntervalSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    post_rate: Option<f64>,
    fixed_n: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    trials: Option<usize>,
    master_seed: Option<u64>,
    output: Option<PathBuf>,
    mode: Option<ProbabilityMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseline {
    pixels: Option<Vec<usize>>,
    read_noise_sigma: Option<f64>,
    n_photons: Option<u64>,
    trials: Option<usize>,
    thetas: Option<GridSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setup: Option<RawSetup>,
    model: Option<RawModel>,
    #[serde(default)]
    sweep: RawSweep,
    source: Option<RawSource>,
    noise: Option<NoiseSpec>,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    baseline: RawBaseline,
}

/// The physical system: an optical setup, or a direct coupling and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Setup(OpticalSetup),
    Direct { g: f64, sigma: f64 },
}

impl SystemSpec {
    pub fn model(&self) -> crate::Result<WeakMeasurementModel> {
        match *self {
            SystemSpec::Setup(s) => to_model(&s),
            SystemSpec::Direct { g, sigma } => WeakMeasurementModel::angle_family(g, sigma),
        }
    }
}

/// One CSV worth of sweep points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepJob {
    pub name: String,
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub source: SourceSpec,
    pub window_ms: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSpec {
    pub pixels: Vec<usize>,
    pub read_noise_sigma: f64,
    pub n_photons: u64,
    pub trials: usize,
    /// Angles of the Fisher-information comparison.
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub preset: Option<String>,
    pub sweeps: Vec<SweepJob>,
    /// Working angle for sweeps over anything but the angle.
    pub theta: f64,
    pub window_ms: f64,
    pub source: SourceSpec,
    pub noise: NoiseSpec,
    /// Estimator branch; `None` selects one per point.
    pub interval: Option<(f64, f64)>,
    pub trials: usize,
    pub master_seed: u64,
    pub output: PathBuf,
    pub mode: ProbabilityMode,
    pub baseline: BaselineSpec,
}

impl ExperimentConfig {
    pub fn model(&self) -> crate::Result<WeakMeasurementModel> {
        self.system.model()
    }

    pub fn settings(&self, job: &SweepJob) -> SweepSettings {
        SweepSettings {
            theta: self.theta,
            source: job.source,
            noise: self.noise,
            window_ms: job.window_ms,
            trials: job.trials,
            master_seed: self.master_seed,
            mode: self.mode,
            interval: self.interval,
        }
    }
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect()
}

fn logspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    let (a, b) = (start.ln(), stop.ln());
    linspace(a, b, points).into_iter().map(f64::exp).collect()
}

fn resolve_grid(key: &str, spec: &GridSpec, angular_ok: bool) -> Result<Vec<f64>, ConfigError> {
    let check_unit = |q: &Quantity| {
        if q.angular && !angular_ok {
            Err(invalid(key, "angle units are only allowed on angle grids"))
        } else {
            Ok(q.value)
        }
    };
    let grid = match spec {
        GridSpec::List(values) => values
            .iter()
            .map(check_unit)
            .collect::<Result<Vec<_>, _>>()?,
        GridSpec::Range(r) => {
            if r.points == 0 {
                return Err(invalid(key, "grid must have at least one point"));
            }
            let (a, b) = (check_unit(&r.start)?, check_unit(&r.stop)?);
            if r.log {
                if !(a > 0.0 && b > 0.0) {
                    return Err(invalid(key, "log grid bounds must be positive"));
                }
                logspace(a, b, r.points)
            } else {
                linspace(a, b, r.points)
            }
        }
    };
    if grid.is_empty() {
        return Err(invalid(key, "grid must not be empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(invalid(key, "grid values must be finite"));
    }
    Ok(grid)
}

fn parse_kind(text: &str) -> Result<SweepKind, ConfigError> {
    match text {
        "theta" => Ok(SweepKind::Theta),
        "n_photons" => Ok(SweepKind::NPhotons),
        "window" => Ok(SweepKind::Window),
        other => Err(invalid(
            "sweep.kind",
            format!("unknown kind `{other}` (expected theta, n_photons or window)"),
        )),
    }
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    let line = e
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    let message = e.message().trim().to_string();
    let key = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field"))
        .map(str::to_string);
    ConfigError::Parse { line, key, message }
}

/// Parses and validates a TOML document, resolving presets and defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;

    let system = match (raw.setup, raw.model) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "setup/model",
                "give exactly one of [setup] and [model]",
            ))
        }
        (None, None) => {
            return Err(invalid(
                "setup/model",
                "one of [setup] or [model] is required",
            ))
        }
        (Some(s), None) => {
            let d = OpticalSetup::default();
            let setup = OpticalSetup {
                wavelength: s.wavelength.unwrap_or(d.wavelength),
                theta_i: s.theta_i.map_or(d.theta_i, |q| q.value),
                n: s.n.unwrap_or(d.n),
                sigma: s.sigma.unwrap_or(d.sigma),
            };
            if !(setup.sigma > 0.0 && setup.sigma.is_finite()) {
                return Err(invalid("setup.sigma", "beam width must be positive"));
            }
            setup
                .validate()
                .map_err(|e| invalid("setup", e.to_string()))?;
            SystemSpec::Setup(setup)
        }
        (None, Some(m)) => {
            if !(m.sigma > 0.0 && m.sigma.is_finite()) {
                return Err(invalid("model.sigma", "meter width must be positive"));
            }
            if !m.g.is_finite() {
                return Err(invalid("model.g", "coupling must be finite"));
            }
            SystemSpec::Direct {
                g: m.g,
                sigma: m.sigma,
            }
        }
    };
    // the optical setup may still sit on a singular angle
    system
        .model()
        .map_err(|e| invalid("setup", e.to_string()))?;

    let source_given = raw.source.is_some();
    let source = match raw.source.unwrap_or_default() {
        RawSource {
            post_rate: Some(_),
            fixed_n: Some(_),
        } => {
            return Err(invalid(
                "source",
                "give exactly one of post_rate and fixed_n",
            ))
        }
        RawSource {
            post_rate: Some(r), ..
        } => SourceSpec::PostRate(r),
        RawSource {
            fixed_n: Some(n), ..
        } => SourceSpec::FixedN(n),
        _ => SourceSpec::PostRate(DEFAULT_POST_RATE),
    };
    source
        .validate()
        .map_err(|e| invalid("source", e.to_string()))?;

    let noise = raw.noise.unwrap_or_default();
    noise
        .validate()
        .map_err(|e| invalid("noise", e.to_string()))?;

    let window_ms = raw.sweep.window.unwrap_or(DEFAULT_WINDOW_MS);
    if !(window_ms > 0.0 && window_ms.is_finite()) {
        return Err(invalid("sweep.window", "window must be positive (ms)"));
    }
    let theta = raw.sweep.theta.map_or(DEFAULT_THETA, |q| q.value);
    if !theta.is_finite() {
        return Err(invalid("sweep.theta", "angle must be finite"));
    }

    let interval = match &raw.sweep.interval {
        None => None,
        Some(IntervalSpec::Named(s)) if s == "auto" => None,
        Some(IntervalSpec::Named(s)) => {
            return Err(invalid(
                "sweep.interval",
                format!("expected \"auto\" or [lo, hi], got `{s}`"),
            ))
        }
        Some(IntervalSpec::Bounds([lo, hi])) => {
            if !(lo.value < hi.value) {
                return Err(invalid("sweep.interval", "bounds must satisfy lo < hi"));
            }
            Some((lo.value, hi.value))
        }
    };

    let trials = raw.run.trials;
    if trials.is_some_and(|t| t < 2) {
        return Err(invalid("run.trials", "need at least 2 trials for a spread"));
    }
    let base_trials = trials.unwrap_or(DEFAULT_TRIALS);

    let preset = raw.sweep.preset.clone();
    let sweeps = match (&preset, &raw.sweep.kind) {
        (Some(_), Some(_)) => return Err(invalid("sweep", "give either preset or kind, not both")),
        (Some(p), None) => {
            if raw.sweep.grid.is_some() {
                return Err(invalid("sweep.grid", "a preset defines its own grid"));
            }
            let rate = if source_given {
                source
            } else {
                SourceSpec::PostRate(DEFAULT_POST_RATE)
            };
            preset_jobs(p, rate, window_ms, trials)?
        }
        (None, kind) => {
            let kind = parse_kind(kind.as_deref().unwrap_or("theta"))?;
            let grid = match &raw.sweep.grid {
                Some(g) => resolve_grid("sweep.grid", g, kind == SweepKind::Theta)?,
                None if kind == SweepKind::Theta => fig3_grid(),
                None => return Err(invalid("sweep.grid", "a grid is required for this kind")),
            };
            if kind != SweepKind::Theta && grid.iter().any(|&v| v <= 0.0) {
                return Err(invalid("sweep.grid", "values must be positive"));
            }
            if kind == SweepKind::NPhotons && grid.iter().any(|v| v.fract() != 0.0) {
                return Err(invalid("sweep.grid", "photon numbers must be integers"));
            }
            let name = match kind {
                SweepKind::Theta => "theta_sweep",
                SweepKind::NPhotons => "n_photons_sweep",
                SweepKind::Window => "window_sweep",
            };
            vec![SweepJob {
                name: name.into(),
                kind,
                grid,
                source,
                window_ms,
                trials: base_trials,
            }]
        }
    };

    let b = raw.baseline;
    let pixels = b.pixels.unwrap_or_else(|| vec![2, 16, 256]);
    if pixels.is_empty() || pixels.iter().any(|&p| p < 2) {
        return Err(invalid(
            "baseline.pixels",
            "pixel counts must be at least 2",
        ));
    }
    let read_noise_sigma = b.read_noise_sigma.unwrap_or(0.0);
    if !(read_noise_sigma >= 0.0 && read_noise_sigma.is_finite()) {
        return Err(invalid("baseline.read_noise_sigma", "must be >= 0"));
    }
    let baseline_trials = b.trials.unwrap_or(200);
    if baseline_trials < 2 {
        return Err(invalid("baseline.trials", "need at least 2 trials"));
    }
    let n_photons = b.n_photons.unwrap_or(50_000);
    if n_photons == 0 {
        return Err(invalid("baseline.n_photons", "must be positive"));
    }
    let thetas = match &b.thetas {
        Some(g) => resolve_grid("baseline.thetas", g, true)?,
        None => logspace(1e-5, 0.3, 41),
    };

    let mode = raw.run.mode.unwrap_or_default();
    Ok(ExperimentConfig {
        system,
        preset,
        sweeps,
        theta,
        window_ms,
        source,
        noise,
        interval,
        trials: base_trials,
        master_seed: raw.run.master_seed.unwrap_or(0),
        output: raw.run.output.unwrap_or_else(|| PathBuf::from("out")),
        mode,
        baseline: BaselineSpec {
            pixels,
            read_noise_sigma,
            n_photons,
            trials: baseline_trials,
            thetas,
        },
    })
}

fn fig3_grid() -> Vec<f64> {
    linspace(-0.1, 0.1, 41)
}

/// Sweeps behind each named figure. `trials` overrides the preset's own count.
fn preset_jobs(
    name: &str,
    rate: SourceSpec,
    window_ms: f64,
    trials: Option<usize>,
) -> Result<Vec<SweepJob>, ConfigError> {
    let theta_job = |name: &str, source: SourceSpec| SweepJob {
        name: name.into(),
        kind: SweepKind::Theta,
        grid: fig3_grid(),
        source,
        window_ms,
        trials: trials.unwrap_or(DEFAULT_TRIALS),
    };
    Ok(match name {
        "fig3" => vec![theta_job("fig3", rate)],
        "fig4" => vec![
            theta_job("fig4_n500", SourceSpec::FixedN(500)),
            theta_job("fig4_n1500", SourceSpec::FixedN(1500)),
        ],
        "fig5" => vec![SweepJob {
            name: "fig5".into(),
            kind: SweepKind::Window,
            grid: vec![10.0, 100.0, 1000.0],
            source: rate,
            window_ms,
            trials: trials.unwrap_or(100),
        }],
        "fig6" => vec![SweepJob {
            name: "fig6".into(),
            kind: SweepKind::NPhotons,
            grid: vec![500.0, 1500.0, 5000.0, 15000.0, 50000.0],
            source: rate,
            window_ms,
            trials: trials.unwrap_or(1000),
        }],
        other => {
            return Err(invalid(
                "sweep.preset",
                format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                ),
            ))
        }
    })
}
