//! Pointer variance, sensitivity, Fisher information, Cramér-Rao bound and
//! angle estimation from two-detector counts.
//!
//! For a binary outcome the error-propagation variance
//! `Var[O] / |∂<O>/∂θ|²` with `Var[O] = 4 p+ p- / N` is identical to
//! `1/(N F_θ)`, `F_θ = Σ± (∂θ p±)² / p±`; [`crb_variance`] computes both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, outcome_probabilities, OutcomeProbabilities, ProbabilityMode, WeakMeasurementModel,
};
use crate::montecarlo::CountRecord;

/// Finite-difference step for exact-mode derivatives, rad.
pub const DERIVATIVE_STEP: f64 = 1e-6;
/// Grid points used to validate that an interval is a monotonic branch.
pub const MONOTONIC_CHECK_POINTS: usize = 33;

/// Sorted sample points for the monotonicity check of `[lo, hi]`: a uniform
/// grid, a geometric grid when the interval keeps one sign, and points just
/// inside each end. Features of this model sit close to `θ = 0`, where a
/// uniform grid is sparse.
pub(crate) fn monotonic_check_grid(lo: f64, hi: f64) -> Vec<f64> {
    let n = MONOTONIC_CHECK_POINTS;
    let mut grid: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    if lo * hi > 0.0 {
        let ratio = hi / lo;
        grid.extend((1..n - 1).map(|k| lo * ratio.powf(k as f64 / (n - 1) as f64)));
    }
    let nudge = 1e-3 * (hi - lo);
    grid.extend([lo + nudge, hi - nudge]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// `Var[O] = 4 p+ p- / N`.
pub fn pointer_variance(probs: &OutcomeProbabilities, n_total: u64) -> Result<f64> {
    if n_total == 0 {
        return Err(Error::InvalidParameter(
            "photon number must be at least 1".into(),
        ));
    }
    Ok(4.0 * probs.p_plus * probs.p_minus / n_total as f64)
}

fn contrast(theta: f64, model: &WeakMeasurementModel, mode: ProbabilityMode) -> Result<f64> {
    Ok(outcome_probabilities(theta, model, mode)?.contrast())
}

/// Slope `∂<O>/∂θ` of the pointer expectation.
///
/// First-order mode differentiates the closed form; exact mode uses a centered
/// difference with step [`DERIVATIVE_STEP`] and one Richardson refinement.
pub fn sensitivity(theta: f64, model: &WeakMeasurementModel, mode: ProbabilityMode) -> Result<f64> {
    match (mode, model.selection) {
        (ProbabilityMode::FirstOrder, model::Selection::Angle) => {
            if model::is_cot_singular(theta) {
                return Err(Error::AngleSingularity { theta });
            }
            let a = model.coupling_ratio();
            let x = a / theta.tan();
            let dx = -a / theta.sin().powi(2);
            let one_plus = 1.0 + x * x;
            Ok(2.0 * model::sqrt_two_over_pi() * (1.0 - x * x) / (one_plus * one_plus) * dx)
        }
        // a fixed selection does not depend on θ
        (_, model::Selection::Fixed { .. }) => Ok(0.0),
        (ProbabilityMode::Exact, model::Selection::Angle) => {
            let h = DERIVATIVE_STEP;
            let central = |h: f64| -> Result<f64> {
                Ok(
                    (contrast(theta + h, model, mode)? - contrast(theta - h, model, mode)?)
                        / (2.0 * h),
                )
            };
            let coarse = central(h)?;
            let fine = central(0.5 * h)?;
            Ok((4.0 * fine - coarse) / 3.0)
        }
    }
}

fn fisher_from_parts(probs: &OutcomeProbabilities, slope: f64) -> Result<f64> {
    let (p, q) = (probs.p_plus, probs.p_minus);
    if !(p > 0.0 && q > 0.0) {
        return Err(Error::DegenerateOutcome { p_plus: p });
    }
    let dp = 0.5 * slope;
    Ok(dp * dp * (1.0 / p + 1.0 / q))
}

/// Per-photon Fisher information of the two-outcome pointer, conditional on
/// post-selection success.
pub fn fisher_information(
    theta: f64,
    model: &WeakMeasurementModel,
    mode: ProbabilityMode,
) -> Result<f64> {
    let probs = outcome_probabilities(theta, model, mode)?;
    fisher_from_parts(&probs, sensitivity(theta, model, mode)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CramerRao {
    pub probabilities: OutcomeProbabilities,
    pub sensitivity: f64,
    pub fisher: f64,
    pub n_total: u64,
    /// `1/(N F_θ)`.
    pub crb_var: f64,
    /// `Var[O] / |∂<O>/∂θ|²`.
    pub error_propagation_var: f64,
}

impl CramerRao {
    pub fn crb_std(&self) -> f64 {
        self.crb_var.sqrt()
    }

    pub fn relative_gap(&self) -> f64 {
        ((self.crb_var - self.error_propagation_var) / self.crb_var).abs()
    }
}

pub fn crb_variance(
    theta: f64,
    model: &WeakMeasurementModel,
    n_total: u64,
    mode: ProbabilityMode,
) -> Result<CramerRao> {
    let probabilities = outcome_probabilities(theta, model, mode)?;
    let slope = sensitivity(theta, model, mode)?;
    cramer_rao_from_parts(probabilities, slope, n_total)
}

pub(crate) fn cramer_rao_from_parts(
    probabilities: OutcomeProbabilities,
    slope: f64,
    n_total: u64,
) -> Result<CramerRao> {
    let fisher = fisher_from_parts(&probabilities, slope)?;
    if !(fisher > 0.0) {
        return Err(Error::DegenerateOutcome {
            p_plus: probabilities.p_plus,
        });
    }
    let n = n_total as f64;
    let var_o = pointer_variance(&probabilities, n_total)?;
    let report = CramerRao {
        probabilities,
        sensitivity: slope,
        fisher,
        n_total,
        crb_var: 1.0 / (n * fisher),
        error_propagation_var: var_o / (slope * slope),
    };
    debug_assert!(
        report.relative_gap() < 1e-12,
        "gap {}",
        report.relative_gap()
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub theta_hat: f64,
    /// Predicted standard deviation `sqrt(1/(N F))` at the estimate.
    pub std_theta: f64,
    pub fisher: f64,
    pub crb_var: f64,
    pub sensitivity: f64,
    pub n_total: u64,
    /// The observation lies outside the branch's range; `theta_hat` is an endpoint.
    pub saturated: bool,
}

/// Monotonic branch of `θ ↦ p+(θ)` containing `theta`, if `theta` is not too
/// close to a contrast extremum. Extrema sit near `|θ| = atan|g/σ|`.
pub fn working_branch(
    theta: f64,
    model: &WeakMeasurementModel,
    mode: ProbabilityMode,
) -> Option<(f64, f64)> {
    let a = model.coupling_ratio();
    let half_pi = std::f64::consts::FRAC_PI_2;
    if a == 0.0 || !theta.is_finite() || theta.abs() >= half_pi {
        return None;
    }
    let peak = a.abs().atan();
    let t = theta.abs();
    let s = theta.signum();
    let (lo, hi) = if t >= 1.25 * peak {
        (1.15 * peak, half_pi - 1e-9)
    } else if t <= 0.8 * peak {
        match mode {
            ProbabilityMode::Exact => return Some((-0.85 * peak, 0.85 * peak)),
            ProbabilityMode::FirstOrder => (1e-4 * peak, 0.85 * peak),
        }
    } else {
        return None;
    };
    if t < lo || t > hi {
        return None;
    }
    Some(if s > 0.0 { (lo, hi) } else { (-hi, -lo) })
}

/// Maximum-likelihood inversion of `p+(θ) = N+/N` on one monotonic branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchEstimator {
    model: WeakMeasurementModel,
    mode: ProbabilityMode,
    lo: f64,
    hi: f64,
    p_lo: f64,
    p_hi: f64,
}

impl BranchEstimator {
    pub fn new(
        model: &WeakMeasurementModel,
        interval: (f64, f64),
        mode: ProbabilityMode,
    ) -> Result<Self> {
        let (lo, hi) = interval;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "search interval must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let ps = monotonic_check_grid(lo, hi)
            .into_iter()
            .map(|t| Ok(outcome_probabilities(t, model, mode)?.p_plus))
            .collect::<Result<Vec<f64>>>()?;
        let increasing = ps.windows(2).all(|w| w[1] > w[0]);
        let decreasing = ps.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::NonMonotonicInterval { lo, hi });
        }
        Ok(Self {
            model: *model,
            mode,
            lo,
            hi,
            p_lo: ps[0],
            p_hi: ps[ps.len() - 1],
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn estimate(&self, counts: &CountRecord) -> Result<EstimationReport> {
        let n = counts.total();
        if n == 0 {
            return Err(Error::EmptyCounts);
        }
        let edge = counts.n_plus == 0 || counts.n_minus == 0;
        self.estimate_fraction_inner(counts.n_plus as f64 / n as f64, n, edge)
    }

    /// Estimates from an observed fraction `p̂ = N+/N`.
    pub fn estimate_fraction(&self, p_hat: f64, n_total: u64) -> Result<EstimationReport> {
        if n_total == 0 {
            return Err(Error::EmptyCounts);
        }
        self.estimate_fraction_inner(p_hat, n_total, false)
    }

    fn estimate_fraction_inner(
        &self,
        p_hat: f64,
        n_total: u64,
        edge: bool,
    ) -> Result<EstimationReport> {
        let (p_min, p_max) = (self.p_lo.min(self.p_hi), self.p_lo.max(self.p_hi));
        let nearest_end = |p: f64| {
            if (p - self.p_lo).abs() <= (p - self.p_hi).abs() {
                self.lo
            } else {
                self.hi
            }
        };

        let (theta_hat, saturated) = if edge || p_hat <= p_min || p_hat >= p_max {
            (nearest_end(p_hat), true)
        } else {
            (self.invert(p_hat)?, false)
        };

        let probabilities = outcome_probabilities(theta_hat, &self.model, self.mode)?;
        let slope = sensitivity(theta_hat, &self.model, self.mode)?;
        let (fisher, crb_var) = match cramer_rao_from_parts(probabilities, slope, n_total) {
            Ok(c) => (c.fisher, c.crb_var),
            Err(Error::DegenerateOutcome { .. }) => (0.0, f64::INFINITY),
            Err(e) => return Err(e),
        };
        Ok(EstimationReport {
            theta_hat,
            std_theta: crb_var.sqrt(),
            fisher,
            crb_var,
            sensitivity: slope,
            n_total,
            saturated,
        })
    }

    fn invert(&self, p_hat: f64) -> Result<f64> {
        let p = |t: f64| Ok(outcome_probabilities(t, &self.model, self.mode)?.p_plus - p_hat);
        bracketed_root(p, self.lo, self.hi, self.p_lo - p_hat, self.p_hi - p_hat)
    }
}

/// Root of `f` on `[a, b]` given `f(a)` and `f(b)` of opposite sign, by the
/// Illinois variant of regula falsi. The bracket always shrinks, so noisy
/// evaluations near the root cost precision but not convergence.
pub(crate) fn bracketed_root<F>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let mut last_side = 0i8;
    for _ in 0..200 {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > lo && c < hi) {
            c = 0.5 * (a + b);
        }
        if !(c > lo && c < hi) || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            return Ok(c);
        }
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if last_side == 1 {
                fa *= 0.5;
            }
            last_side = 1;
        } else {
            a = c;
            fa = fc;
            if last_side == -1 {
                fb *= 0.5;
            }
            last_side = -1;
        }
    }
    Ok((a * fb - b * fa) / (fb - fa))
}

/// One-shot estimate; validates the interval on every call. Use
/// [`BranchEstimator`] to reuse the validation across many records.
pub fn estimate_theta(
    counts: &CountRecord,
    model: &WeakMeasurementModel,
    search_interval: (f64, f64),
    mode: ProbabilityMode,
) -> Result<EstimationReport> {
    BranchEstimator::new(model, search_interval, mode)?.estimate(counts)
}
