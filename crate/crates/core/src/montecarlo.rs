//! Seeded photon-counting simulation of the two-detector pointer.
//!
//! Every window owns its RNG, seeded from a 64-bit seed. Per-trial seeds are
//! derived from a master seed with a SplitMix64 counter, so results do not
//! depend on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{crb_variance, BranchEstimator};
use crate::model::{outcome_probabilities_exact, ProbabilityMode, WeakMeasurementModel};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`: the `index`-th SplitMix64 output.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sample_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    // lambda is positive and finite here
    Poisson::new(lambda)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

pub(crate) fn sample_binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Technical noise. All sources are off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Dark/background counts per second on each detector.
    pub background_rate: f64,
    /// Relative standard deviation of the source power per window.
    pub power_rel_sigma: f64,
    pub detector_efficiency: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            background_rate: 0.0,
            power_rel_sigma: 0.0,
            detector_efficiency: 1.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(Error::InvalidParameter(
                "background_rate must be >= 0".into(),
            ));
        }
        if !(self.power_rel_sigma >= 0.0 && self.power_rel_sigma.is_finite()) {
            return Err(Error::InvalidParameter(
                "power_rel_sigma must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return Err(Error::InvalidParameter(
                "detector_efficiency must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// How many post-selected photons reach the detectors per window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    /// Expected post-selected detection rate, counts/s; window totals are Poisson.
    PostRate(f64),
    /// Exactly this many post-selected photons per window.
    FixedN(u64),
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SourceSpec::PostRate(r) if !(r > 0.0 && r.is_finite()) => Err(Error::InvalidParameter(
                format!("post_rate must be positive, got {r}"),
            )),
            SourceSpec::FixedN(0) => {
                Err(Error::InvalidParameter("fixed_n must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Mean number of detected signal photons in a window.
    pub fn expected_photons(&self, window_ms: f64, noise: &NoiseSpec) -> f64 {
        match *self {
            SourceSpec::PostRate(r) => r * window_ms * 1e-3 * noise.detector_efficiency,
            SourceSpec::FixedN(n) => n as f64,
        }
    }
}

/// Counts of one integration window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub n_plus: u64,
    pub n_minus: u64,
    pub window_ms: f64,
    pub theta_true: f64,
    pub seed: u64,
}

impl CountRecord {
    pub fn total(&self) -> u64 {
        self.n_plus + self.n_minus
    }

    /// `(N+ - N-)/(N+ + N-)`, undefined for an empty window.
    pub fn contrast(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.n_plus as f64 - self.n_minus as f64) / n as f64)
    }
}

/// Window sampler with the outcome probability resolved once.
#[derive(Debug, Clone, Copy)]
pub struct WindowSimulator {
    theta: f64,
    p_plus: f64,
    source: SourceSpec,
    noise: NoiseSpec,
    window_ms: f64,
}

impl WindowSimulator {
    pub fn new(
        theta: f64,
        model: &WeakMeasurementModel,
        source: SourceSpec,
        noise: NoiseSpec,
        window_ms: f64,
    ) -> Result<Self> {
        source.validate()?;
        noise.validate()?;
        if !(window_ms > 0.0 && window_ms.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window must be positive, got {window_ms} ms"
            )));
        }
        let p_plus = outcome_probabilities_exact(theta, model)?.p_plus;
        Ok(Self {
            theta,
            p_plus,
            source,
            noise,
            window_ms,
        })
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn simulate(&self, seed: u64) -> CountRecord {
        let mut rng = rng_from_seed(seed);
        let noise = &self.noise;
        let seconds = self.window_ms * 1e-3;

        let power = if noise.power_rel_sigma > 0.0 {
            let normal = Normal::new(1.0, noise.power_rel_sigma).expect("validated sigma");
            normal.sample(&mut rng).max(0.0)
        } else {
            1.0
        };
        let n = match self.source {
            SourceSpec::PostRate(rate) => {
                sample_poisson(&mut rng, power * rate * seconds * noise.detector_efficiency)
            }
            SourceSpec::FixedN(n) => n,
        };
        let n_plus = sample_binomial(&mut rng, n, self.p_plus);
        let background = noise.background_rate * seconds;
        let bg_plus = sample_poisson(&mut rng, background);
        let bg_minus = sample_poisson(&mut rng, background);

        CountRecord {
            n_plus: n_plus + bg_plus,
            n_minus: n - n_plus + bg_minus,
            window_ms: self.window_ms,
            theta_true: self.theta,
            seed,
        }
    }
}

/// One integration window: power factor, photon number, binomial split, background.
pub fn simulate_window(
    theta: f64,
    model: &WeakMeasurementModel,
    source: SourceSpec,
    noise: NoiseSpec,
    window_ms: f64,
    seed: u64,
) -> Result<CountRecord> {
    Ok(WindowSimulator::new(theta, model, source, noise, window_ms)?.simulate(seed))
}

/// Sample mean and (n-1)-normalized standard deviation, accumulated in order.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStatistics {
    pub mean_contrast: f64,
    pub std_contrast: f64,
    /// Windows with no photons; excluded from the contrast statistics.
    pub empty_windows: usize,
    pub records: Vec<CountRecord>,
}

pub fn run_trials(
    theta: f64,
    model: &WeakMeasurementModel,
    source: SourceSpec,
    noise: NoiseSpec,
    window_ms: f64,
    n_trials: usize,
    master_seed: u64,
) -> Result<TrialStatistics> {
    if n_trials < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 trials, got {n_trials}"
        )));
    }
    let sim = WindowSimulator::new(theta, model, source, noise, window_ms)?;
    let records: Vec<CountRecord> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| sim.simulate(derive_seed(master_seed, i)))
        .collect();
    let contrasts: Vec<f64> = records.iter().filter_map(CountRecord::contrast).collect();
    let (mean_contrast, std_contrast) = mean_and_std(&contrasts);
    Ok(TrialStatistics {
        mean_contrast,
        std_contrast,
        empty_windows: records.len() - contrasts.len(),
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Theta,
    NPhotons,
    Window,
}

/// Fixed parameters of a sweep; the swept one is overridden per grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub theta: f64,
    pub source: SourceSpec,
    pub noise: NoiseSpec,
    pub window_ms: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub mode: ProbabilityMode,
    /// Estimator branch; `None` picks the monotonic branch around each point.
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_contrast: f64,
    pub std_contrast: f64,
    pub exact_contrast: f64,
    pub theta_hat_mean: f64,
    pub theta_hat_std: f64,
    pub crb_std: f64,
    pub fisher: f64,
}

impl SweepRow {
    pub const HEADER: [&'static str; 8] = [
        "value",
        "mean_contrast",
        "std_contrast",
        "exact_contrast",
        "theta_hat_mean",
        "theta_hat_std",
        "crb_std",
        "fisher",
    ];

    pub fn fields(&self) -> [f64; 8] {
        [
            self.value,
            self.mean_contrast,
            self.std_contrast,
            self.exact_contrast,
            self.theta_hat_mean,
            self.theta_hat_std,
            self.crb_std,
            self.fisher,
        ]
    }
}

/// One grid point of [`sweep`]; `point` is its index in the grid.
pub fn sweep_point(
    point: u64,
    value: f64,
    kind: SweepKind,
    model: &WeakMeasurementModel,
    s: &SweepSettings,
) -> Result<SweepRow> {
    let (theta, source, window_ms) = match kind {
        SweepKind::Theta => (value, s.source, s.window_ms),
        SweepKind::NPhotons => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "photon number grid values must be positive integers, got {value}"
                )));
            }
            (s.theta, SourceSpec::FixedN(value as u64), s.window_ms)
        }
        SweepKind::Window => (s.theta, s.source, value),
    };

    let seed = derive_seed(s.master_seed, point);
    let stats = run_trials(theta, model, source, s.noise, window_ms, s.trials, seed)?;
    let exact = outcome_probabilities_exact(theta, model)?;

    let expected_n = source
        .expected_photons(window_ms, &s.noise)
        .round()
        .max(1.0) as u64;
    let (crb_std, fisher) = match crb_variance(theta, model, expected_n, s.mode) {
        Ok(c) => (c.crb_std(), c.fisher),
        Err(Error::DegenerateOutcome { .. }) | Err(Error::AngleSingularity { .. }) => {
            (f64::NAN, f64::NAN)
        }
        Err(e) => return Err(e),
    };

    let branch = s
        .interval
        .filter(|&(lo, hi)| theta >= lo && theta <= hi)
        .or_else(|| {
            if s.interval.is_none() {
                crate::estimation::working_branch(theta, model, s.mode)
            } else {
                None
            }
        });
    let (theta_hat_mean, theta_hat_std) = match branch {
        Some(b) => {
            let est = BranchEstimator::new(model, b, s.mode)?;
            let hats = stats
                .records
                .par_iter()
                .filter(|r| r.total() > 0)
                .map(|r| est.estimate(r).map(|e| e.theta_hat))
                .collect::<Result<Vec<f64>>>()?;
            mean_and_std(&hats)
        }
        None => (f64::NAN, f64::NAN),
    };

    Ok(SweepRow {
        value,
        mean_contrast: stats.mean_contrast,
        std_contrast: stats.std_contrast,
        exact_contrast: exact.contrast(),
        theta_hat_mean,
        theta_hat_std,
        crb_std,
        fisher,
    })
}

/// Trial statistics at every grid point. Grid point `j` draws its trial seeds
/// from `derive_seed(master_seed, j)`.
pub fn sweep(
    kind: SweepKind,
    grid: &[f64],
    model: &WeakMeasurementModel,
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    grid.par_iter()
        .enumerate()
        .map(|(j, &v)| sweep_point(j as u64, v, kind, model, settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::pointer_variance;
    use crate::optics::{to_model, OpticalSetup};
    use std::f64::consts::PI;

    fn paper_model() -> WeakMeasurementModel {
        to_model(&OpticalSetup::default()).unwrap()
    }

    fn ideal() -> NoiseSpec {
        NoiseSpec::default()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(derive_seed(42, 7), seeds[7]);
        assert_ne!(derive_seed(43, 7), seeds[7]);
    }

    #[test]
    fn same_seed_same_record() {
        let model = paper_model();
        let noise = NoiseSpec {
            background_rate: 200.0,
            power_rel_sigma: 0.05,
            detector_efficiency: 0.7,
        };
        let a = simulate_window(0.01, &model, SourceSpec::PostRate(5e4), noise, 10.0, 99).unwrap();
        let b = simulate_window(0.01, &model, SourceSpec::PostRate(5e4), noise, 10.0, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_window(0.01, &model, SourceSpec::PostRate(5e4), noise, 10.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn symmetric_point_gives_zero_contrast() {
        let model = paper_model();
        let r = simulate_window(
            PI / 2.0,
            &model,
            SourceSpec::FixedN(1_000_000),
            ideal(),
            10.0,
            1,
        )
        .unwrap();
        assert_eq!(r.total(), 1_000_000);
        assert!(r.contrast().unwrap().abs() < 0.003);
    }

    #[test]
    fn mean_contrast_converges_to_exact() {
        let model = paper_model();
        let exact = outcome_probabilities_exact(0.01, &model).unwrap();
        let stats = run_trials(
            0.01,
            &model,
            SourceSpec::FixedN(1_000_000),
            ideal(),
            10.0,
            100,
            5,
        )
        .unwrap();
        let single = pointer_variance(&exact, 1_000_000).unwrap().sqrt();
        let combined = single / 10.0;
        assert!((stats.mean_contrast - exact.contrast()).abs() < 3.0 * combined);
    }

    #[test]
    fn empty_windows_are_allowed() {
        let model = paper_model();
        let r = simulate_window(0.01, &model, SourceSpec::PostRate(1.0), ideal(), 1e-3, 3).unwrap();
        assert_eq!(r.total(), 0);
        assert_eq!(r.contrast(), None);
    }

    #[test]
    fn background_shrinks_contrast_keeping_sign() {
        let model = paper_model();
        let clean = run_trials(
            0.01,
            &model,
            SourceSpec::FixedN(20_000),
            ideal(),
            10.0,
            50,
            8,
        )
        .unwrap();
        let noisy_spec = NoiseSpec {
            background_rate: 1e6,
            ..ideal()
        };
        let noisy = run_trials(
            0.01,
            &model,
            SourceSpec::FixedN(20_000),
            noisy_spec,
            10.0,
            50,
            8,
        )
        .unwrap();
        assert_eq!(noisy.mean_contrast.signum(), clean.mean_contrast.signum());
        assert!(noisy.mean_contrast.abs() < clean.mean_contrast.abs());
        // 10k background per detector: shrink by 20k/40k
        assert!((noisy.mean_contrast / clean.mean_contrast - 0.5).abs() < 0.05);
    }

    #[test]
    fn efficiency_and_power_noise() {
        let model = paper_model();
        let half = NoiseSpec {
            detector_efficiency: 0.5,
            ..ideal()
        };
        let s = run_trials(0.01, &model, SourceSpec::PostRate(1e5), half, 100.0, 50, 2).unwrap();
        let mean_n = s.records.iter().map(|r| r.total() as f64).sum::<f64>() / 50.0;
        assert!((mean_n - 5000.0).abs() < 5.0 * (5000.0f64 / 50.0).sqrt());

        let jitter = NoiseSpec {
            power_rel_sigma: 0.2,
            ..ideal()
        };
        let s = run_trials(
            0.01,
            &model,
            SourceSpec::PostRate(1e5),
            jitter,
            100.0,
            400,
            2,
        )
        .unwrap();
        let totals: Vec<f64> = s.records.iter().map(|r| r.total() as f64).collect();
        let (m, sd) = mean_and_std(&totals);
        // Poisson alone would give ~100; 20% power jitter gives ~2000
        assert!(sd > 1500.0 && sd < 2500.0, "{m} {sd}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let model = paper_model();
        assert!(simulate_window(0.01, &model, SourceSpec::FixedN(0), ideal(), 10.0, 1).is_err());
        assert!(
            simulate_window(0.01, &model, SourceSpec::PostRate(-1.0), ideal(), 10.0, 1).is_err()
        );
        assert!(simulate_window(0.01, &model, SourceSpec::FixedN(10), ideal(), 0.0, 1).is_err());
        let bad = NoiseSpec {
            detector_efficiency: 1.5,
            ..ideal()
        };
        assert!(simulate_window(0.01, &model, SourceSpec::FixedN(10), bad, 10.0, 1).is_err());
        assert!(run_trials(0.01, &model, SourceSpec::FixedN(10), ideal(), 10.0, 1, 1).is_err());
    }

    #[test]
    fn trial_statistics_do_not_depend_on_thread_count() {
        let model = paper_model();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_trials(
                        0.01,
                        &model,
                        SourceSpec::PostRate(5e4),
                        ideal(),
                        10.0,
                        64,
                        11,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sweep_rows_follow_the_grid() {
        let model = paper_model();
        let settings = SweepSettings {
            theta: 0.01,
            source: SourceSpec::FixedN(1000),
            noise: ideal(),
            window_ms: 10.0,
            trials: 20,
            master_seed: 4,
            mode: ProbabilityMode::Exact,
            interval: None,
        };
        let grid = [-0.05, -0.01, 0.01, 0.05];
        let rows = sweep(SweepKind::Theta, &grid, &model, &settings).unwrap();
        assert_eq!(rows.len(), 4);
        for (r, g) in rows.iter().zip(grid) {
            assert_eq!(r.value, g);
            assert!(r.theta_hat_mean.is_finite());
        }
        assert!((rows[0].exact_contrast + rows[3].exact_contrast).abs() < 1e-12);
        assert!(sweep(SweepKind::Theta, &[], &model, &settings).is_err());
        assert!(sweep(SweepKind::NPhotons, &[10.5], &model, &settings).is_err());
    }
}
