//! Pixelated ("CCD-like") reference detector.
//!
//! The same post-selected meter density as the two-bin pointer, binned into
//! `n_pixels` equal cells over `[-u_max, u_max]`. Estimation uses the
//! count-weighted centroid; information content is compared through the
//! per-photon Fisher information of the pixel distribution.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    bracketed_root, fisher_information, monotonic_check_grid, BranchEstimator, EstimationReport,
    DERIVATIVE_STEP,
};
use crate::model::{ProbabilityMode, WeakMeasurementModel};
use crate::montecarlo::{
    derive_seed, mean_and_std, rng_from_seed, sample_binomial, NoiseSpec, SourceSpec,
    WindowSimulator,
};

/// Pixels with probability below this are left out of the Fisher sum.
pub const PIXEL_PROBABILITY_FLOOR: f64 = 1e-15;
const CENTROID_TABLE_POINTS: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelArraySpec {
    pub n_pixels: usize,
    /// Half-width of the covered meter range (same unit as `1/σ`).
    pub u_max: f64,
    /// Gaussian read noise, counts per pixel per frame.
    pub read_noise_sigma: f64,
}

impl PixelArraySpec {
    /// `n_pixels` cells over the same ±8 standard deviations the two-bin split uses.
    pub fn covering(model: &WeakMeasurementModel, n_pixels: usize) -> Self {
        Self {
            n_pixels,
            u_max: model.meter.split_range(),
            read_noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pixels < 2 {
            return Err(Error::InvalidParameter("need at least 2 pixels".into()));
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return Err(Error::InvalidParameter("u_max must be positive".into()));
        }
        if !(self.read_noise_sigma >= 0.0 && self.read_noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(
                "read_noise_sigma must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.n_pixels;
        let (lo, hi) = (-self.u_max, self.u_max);
        (0..=n)
            .map(|k| lo + (hi - lo) * k as f64 / n as f64)
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges()
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub pixel_counts: Vec<u64>,
    pub window_ms: f64,
    pub theta_true: f64,
    pub seed: u64,
}

impl FrameRecord {
    pub fn total(&self) -> u64 {
        self.pixel_counts.iter().sum()
    }
}

/// Probability of each pixel under the normalized post-selected density.
/// Entries sum to the mass inside `±u_max`.
pub fn pixel_probabilities(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
) -> Result<Vec<f64>> {
    pixels.validate()?;
    let m = model.at(theta);
    let p_ps = m.outcome_probabilities()?.p_ps;
    pixels
        .edges()
        .windows(2)
        .map(|w| Ok(m.density_integral(w[0], w[1])? / p_ps))
        .collect()
}

/// Multinomial allocation of `n_photons` plus rounded Gaussian read noise.
#[derive(Debug, Clone)]
pub struct FrameSimulator {
    theta: f64,
    probabilities: Vec<f64>,
    read_noise: f64,
    window_ms: f64,
}

impl FrameSimulator {
    pub fn new(
        theta: f64,
        model: &WeakMeasurementModel,
        pixels: &PixelArraySpec,
        window_ms: f64,
    ) -> Result<Self> {
        Ok(Self {
            theta,
            probabilities: pixel_probabilities(theta, model, pixels)?,
            read_noise: pixels.read_noise_sigma,
            window_ms,
        })
    }

    pub fn simulate(&self, n_photons: u64, seed: u64) -> FrameRecord {
        let mut rng = rng_from_seed(seed);
        let mut remaining_n = n_photons;
        let mut remaining_p = 1.0;
        let mut counts = Vec::with_capacity(self.probabilities.len());
        for &p in &self.probabilities {
            let k = if remaining_p > 0.0 {
                sample_binomial(&mut rng, remaining_n, (p / remaining_p).min(1.0))
            } else {
                0
            };
            counts.push(k);
            remaining_n -= k;
            remaining_p -= p;
        }
        if self.read_noise > 0.0 {
            let normal = Normal::new(0.0, self.read_noise).expect("validated read noise");
            for c in &mut counts {
                let noisy = *c as f64 + normal.sample(&mut rng);
                *c = noisy.round().max(0.0) as u64;
            }
        }
        FrameRecord {
            pixel_counts: counts,
            window_ms: self.window_ms,
            theta_true: self.theta,
            seed,
        }
    }
}

pub fn simulate_frame(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
    n_photons: u64,
    window_ms: f64,
    seed: u64,
) -> Result<FrameRecord> {
    Ok(FrameSimulator::new(theta, model, pixels, window_ms)?.simulate(n_photons, seed))
}

/// Centroid of the in-range pixel distribution and its per-photon variance.
fn centroid_moments(probs: &[f64], centers: &[f64]) -> (f64, f64) {
    let mass: f64 = probs.iter().sum();
    let mean = probs.iter().zip(centers).map(|(p, c)| p * c).sum::<f64>() / mass;
    let second = probs
        .iter()
        .zip(centers)
        .map(|(p, c)| p * c * c)
        .sum::<f64>()
        / mass;
    (mean, second - mean * mean)
}

fn pixel_derivatives(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
) -> Result<Vec<f64>> {
    let central = |h: f64| -> Result<Vec<f64>> {
        let up = pixel_probabilities(theta + h, model, pixels)?;
        let down = pixel_probabilities(theta - h, model, pixels)?;
        Ok(up
            .iter()
            .zip(&down)
            .map(|(u, d)| (u - d) / (2.0 * h))
            .collect())
    };
    let coarse = central(DERIVATIVE_STEP)?;
    let fine = central(0.5 * DERIVATIVE_STEP)?;
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherComparison {
    pub twobin: f64,
    pub pixels: f64,
    /// `twobin / pixels`; NaN when the pixel information vanishes.
    pub ratio: f64,
    /// Pixels below [`PIXEL_PROBABILITY_FLOOR`] that were excluded.
    pub excluded_pixels: usize,
}

/// Per-photon Fisher information of the pixel distribution,
/// `Σ_i (∂θ P_i)² / P_i`, and the number of excluded pixels.
pub fn pixel_fisher(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
) -> Result<(f64, usize)> {
    let probs = pixel_probabilities(theta, model, pixels)?;
    let derivs = pixel_derivatives(theta, model, pixels)?;
    let mut excluded = 0;
    let mut fisher = 0.0;
    for (p, d) in probs.iter().zip(&derivs) {
        if *p < PIXEL_PROBABILITY_FLOOR {
            excluded += 1;
        } else {
            fisher += d * d / p;
        }
    }
    Ok((fisher, excluded))
}

pub fn fisher_comparison(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
) -> Result<FisherComparison> {
    let twobin = fisher_information(theta, model, ProbabilityMode::Exact)?;
    let (pix, excluded_pixels) = pixel_fisher(theta, model, pixels)?;
    let ratio = if pix > 0.0 { twobin / pix } else { f64::NAN };
    Ok(FisherComparison {
        twobin,
        pixels: pix,
        ratio,
        excluded_pixels,
    })
}

/// Inverts the expected-centroid map `θ ↦ E[u | θ]` on a monotonic branch.
#[derive(Debug, Clone)]
pub struct CentroidEstimator {
    model: WeakMeasurementModel,
    pixels: PixelArraySpec,
    centers: Vec<f64>,
    table: Vec<(f64, f64)>,
}

impl CentroidEstimator {
    pub fn new(
        model: &WeakMeasurementModel,
        pixels: &PixelArraySpec,
        interval: (f64, f64),
    ) -> Result<Self> {
        pixels.validate()?;
        let (lo, hi) = interval;
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "search interval must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let centers = pixels.centers();
        let n = CENTROID_TABLE_POINTS;
        let mut grid: Vec<f64> = (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect();
        grid.extend(monotonic_check_grid(lo, hi));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let table = grid
            .into_iter()
            .map(|t| {
                let probs = pixel_probabilities(t, model, pixels)?;
                Ok((t, centroid_moments(&probs, &centers).0))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;

        let pitch = 2.0 * pixels.u_max / pixels.n_pixels as f64;
        let span = (table[table.len() - 1].1 - table[0].1).abs();
        let increasing = table.windows(2).all(|w| w[1].1 > w[0].1);
        let decreasing = table.windows(2).all(|w| w[1].1 < w[0].1);
        if span < 1e-9 * pitch || !(increasing || decreasing) {
            return Err(Error::NonMonotonicInterval { lo, hi });
        }
        Ok(Self {
            model: *model,
            pixels: *pixels,
            centers,
            table,
        })
    }

    fn centroid_at(&self, theta: f64) -> Result<f64> {
        let probs = pixel_probabilities(theta, &self.model, &self.pixels)?;
        Ok(centroid_moments(&probs, &self.centers).0)
    }

    /// Observed count-weighted centroid of a frame.
    pub fn frame_centroid(&self, frame: &FrameRecord) -> Result<f64> {
        let total = frame.total();
        if total == 0 {
            return Err(Error::EmptyFrame);
        }
        if frame.pixel_counts.len() != self.centers.len() {
            return Err(Error::InvalidParameter(format!(
                "frame has {} pixels, detector has {}",
                frame.pixel_counts.len(),
                self.centers.len()
            )));
        }
        let weighted: f64 = frame
            .pixel_counts
            .iter()
            .zip(&self.centers)
            .map(|(&n, c)| n as f64 * c)
            .sum();
        Ok(weighted / total as f64)
    }

    pub fn estimate(&self, frame: &FrameRecord) -> Result<EstimationReport> {
        let observed = self.frame_centroid(frame)?;
        let total = frame.total();
        let first = self.table[0];
        let last = self.table[self.table.len() - 1];
        let (min, max) = (first.1.min(last.1), first.1.max(last.1));

        let (theta_hat, saturated) = if observed <= min || observed >= max {
            let end = if (observed - first.1).abs() <= (observed - last.1).abs() {
                first.0
            } else {
                last.0
            };
            (end, true)
        } else {
            (self.invert(observed)?, false)
        };

        let probs = pixel_probabilities(theta_hat, &self.model, &self.pixels)?;
        let (_, var_u) = centroid_moments(&probs, &self.centers);
        let h = DERIVATIVE_STEP;
        let slope =
            (self.centroid_at(theta_hat + h)? - self.centroid_at(theta_hat - h)?) / (2.0 * h);
        let (fisher, _) = pixel_fisher(theta_hat, &self.model, &self.pixels)?;
        let n = total as f64;
        Ok(EstimationReport {
            theta_hat,
            std_theta: (var_u / n).sqrt() / slope.abs(),
            fisher,
            crb_var: 1.0 / (n * fisher),
            sensitivity: slope,
            n_total: total,
            saturated,
        })
    }

    fn invert(&self, target: f64) -> Result<f64> {
        let k = self
            .table
            .windows(2)
            .position(|w| (w[0].1 - target) * (w[1].1 - target) <= 0.0)
            .expect("target inside table range");
        let (a, b) = (self.table[k], self.table[k + 1]);
        bracketed_root(
            |t| Ok(self.centroid_at(t)? - target),
            a.0,
            b.0,
            a.1 - target,
            b.1 - target,
        )
    }
}

pub fn centroid_estimate(
    frame: &FrameRecord,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
    search_interval: (f64, f64),
) -> Result<EstimationReport> {
    CentroidEstimator::new(model, pixels, search_interval)?.estimate(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleComparison {
    pub twobin_std: f64,
    pub centroid_std: f64,
    /// `twobin_std / centroid_std`.
    pub ratio: f64,
    pub twobin_mean: f64,
    pub centroid_mean: f64,
}

/// Estimator spreads of the two-bin pointer and the pixel centroid at the
/// same photon budget per trial.
pub fn compare_ensembles(
    theta: f64,
    model: &WeakMeasurementModel,
    pixels: &PixelArraySpec,
    n_photons: u64,
    trials: usize,
    master_seed: u64,
    interval: (f64, f64),
) -> Result<EnsembleComparison> {
    let window = WindowSimulator::new(
        theta,
        model,
        SourceSpec::FixedN(n_photons),
        NoiseSpec::default(),
        1.0,
    )?;
    let frames = FrameSimulator::new(theta, model, pixels, 1.0)?;
    let twobin = BranchEstimator::new(model, interval, ProbabilityMode::Exact)?;
    let centroid = CentroidEstimator::new(model, pixels, interval)?;

    let pairs = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i);
            let a = twobin
                .estimate(&window.simulate(derive_seed(seed, 0)))?
                .theta_hat;
            let b = centroid
                .estimate(&frames.simulate(n_photons, derive_seed(seed, 1)))?
                .theta_hat;
            Ok((a, b))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (twobin_mean, twobin_std) = mean_and_std(&a);
    let (centroid_mean, centroid_std) = mean_and_std(&b);
    Ok(EnsembleComparison {
        twobin_std,
        centroid_std,
        ratio: twobin_std / centroid_std,
        twobin_mean,
        centroid_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::outcome_probabilities_exact;
    use crate::optics::{to_model, OpticalSetup};
    use crate::quadrature::{integrate, Tolerance};
    use approx::assert_relative_eq;

    fn paper_model() -> WeakMeasurementModel {
        to_model(&OpticalSetup::default()).unwrap()
    }

    #[test]
    fn two_pixels_reduce_to_the_pointer() {
        let model = paper_model();
        let pixels = PixelArraySpec::covering(&model, 2);
        for theta in [0.004, 0.01, 0.2, -0.05] {
            let p = pixel_probabilities(theta, &model, &pixels).unwrap();
            let o = outcome_probabilities_exact(theta, &model).unwrap();
            assert!((p[0] - o.p_minus).abs() < 1e-9);
            assert!((p[1] - o.p_plus).abs() < 1e-9);
        }
    }

    #[test]
    fn no_coupling_is_mirror_symmetric() {
        let model = WeakMeasurementModel::angle_family(0.0, 27.0).unwrap();
        let pixels = PixelArraySpec::covering(&model, 16);
        let p = pixel_probabilities(0.01, &model, &pixels).unwrap();
        for i in 0..8 {
            assert!((p[i] - p[15 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn fine_pixels_match_direct_quadrature() {
        let model = paper_model();
        let pixels = PixelArraySpec::covering(&model, 256);
        let p = pixel_probabilities(0.01, &model, &pixels).unwrap();
        let sigma = model.meter.sigma();
        let g = model.coupling;
        let density = |u: f64| {
            (0.01 + g * u).sin().powi(2) * sigma / (2.0 * std::f64::consts::PI).sqrt()
                * (-0.5 * u * u * sigma * sigma).exp()
        };
        let tol = Tolerance {
            rel: 1e-13,
            ..Tolerance::default()
        };
        let total = integrate(density, -pixels.u_max, pixels.u_max, tol)
            .unwrap()
            .value;
        let edges = pixels.edges();
        for i in [0usize, 60, 127, 128, 200, 255] {
            let direct = integrate(density, edges[i], edges[i + 1], tol)
                .unwrap()
                .value
                / total;
            assert!(
                (p[i] - direct).abs() < 1e-12 * direct.max(1e-3),
                "pixel {i}"
            );
        }
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frames_follow_the_multinomial() {
        let model = paper_model();
        let pixels = PixelArraySpec::covering(&model, 16);
        let probs = pixel_probabilities(0.01, &model, &pixels).unwrap();
        let n = 1_000_000u64;
        let f = simulate_frame(0.01, &model, &pixels, n, 10.0, 17).unwrap();
        assert_eq!(f.pixel_counts.len(), 16);
        for (c, p) in f.pixel_counts.iter().zip(&probs) {
            let mean = n as f64 * p;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*c as f64 - mean).abs() <= 5.0 * sd.max(1.0),
                "{c} vs {mean}"
            );
        }
        assert_eq!(
            f,
            simulate_frame(0.01, &model, &pixels, n, 10.0, 17).unwrap()
        );
        let empty = simulate_frame(0.01, &model, &pixels, 0, 10.0, 17).unwrap();
        assert!(empty.pixel_counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn read_noise_is_floored_at_zero() {
        let model = paper_model();
        let pixels = PixelArraySpec {
            read_noise_sigma: 3.0,
            ..PixelArraySpec::covering(&model, 64)
        };
        let f = simulate_frame(0.01, &model, &pixels, 0, 10.0, 2).unwrap();
        assert!(f.total() > 0);
        let g = simulate_frame(0.01, &model, &pixels, 0, 10.0, 2).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn centroid_round_trip() {
        let model = paper_model();
        let pixels = PixelArraySpec::covering(&model, 64);
        let est = CentroidEstimator::new(&model, &pixels, (0.005, 0.3)).unwrap();
        for theta in [0.008, 0.01, 0.05] {
            let probs = pixel_probabilities(theta, &model, &pixels).unwrap();
            let scale = 1e12;
            let frame = FrameRecord {
                pixel_counts: probs.iter().map(|p| (p * scale).round() as u64).collect(),
                window_ms: 10.0,
                theta_true: theta,
                seed: 0,
            };
            let r = est.estimate(&frame).unwrap();
            assert!(
                (r.theta_hat - theta).abs() < 1e-6,
                "θ={theta} θ̂={}",
                r.theta_hat
            );
            assert!(!r.saturated);
            assert!(r.std_theta >= r.crb_var.sqrt() * (1.0 - 1e-6));
        }
    }

    #[test]
    fn centroid_without_signal_is_rejected() {
        let model = WeakMeasurementModel::angle_family(0.0, 27.0).unwrap();
        let pixels = PixelArraySpec::covering(&model, 16);
        let err = CentroidEstimator::new(&model, &pixels, (0.005, 0.3)).unwrap_err();
        assert!(matches!(err, Error::NonMonotonicInterval { .. }));
    }

    #[test]
    fn empty_frame_is_rejected() {
        let model = paper_model();
        let pixels = PixelArraySpec::covering(&model, 16);
        let frame = FrameRecord {
            pixel_counts: vec![0; 16],
            window_ms: 1.0,
            theta_true: 0.01,
            seed: 0,
        };
        assert!(matches!(
            centroid_estimate(&frame, &model, &pixels, (0.005, 0.3)),
            Err(Error::EmptyFrame)
        ));
    }

    #[test]
    fn fisher_comparison_cases() {
        let model = paper_model();
        let two = fisher_comparison(0.01, &model, &PixelArraySpec::covering(&model, 2)).unwrap();
        assert_relative_eq!(two.ratio, 1.0, max_relative = 1e-9);
        let fine = fisher_comparison(0.01, &model, &PixelArraySpec::covering(&model, 256)).unwrap();
        assert!(fine.twobin <= fine.pixels);
        // scipy reference: F_pixels(256) = 3479.95
        assert_relative_eq!(fine.pixels, 3_479.945_62, max_relative = 1e-5);

        let flat = WeakMeasurementModel::angle_family(0.0, 27.0).unwrap();
        let z = fisher_comparison(0.01, &flat, &PixelArraySpec::covering(&flat, 16)).unwrap();
        assert_eq!(z.twobin, 0.0);
        assert!(z.pixels.abs() < 1e-12);
    }

    #[test]
    fn refinement_never_loses_information() {
        let model = paper_model();
        let f: Vec<f64> = [2, 4, 8, 16, 32]
            .iter()
            .map(|&n| {
                pixel_fisher(0.01, &model, &PixelArraySpec::covering(&model, n))
                    .unwrap()
                    .0
            })
            .collect();
        for w in f.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{f:?}");
        }
    }
}
