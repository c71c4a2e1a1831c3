//! Weak-measurement chain: pre-selection, coupling `exp(-i g A u)`, post-selection,
//! and the two-bin split of the meter variable `u`.
//!
//! The meter variable `u` is the one conjugate to the transverse position. For a
//! meter amplitude `f(q) ∝ exp(-q²/σ²)` its density is Gaussian with zero mean
//! and variance `1/σ²`. The spin-up bin is `u > 0`, the spin-down bin `u < 0`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

/// Smallest `|<post|pre>|` for which a weak value is reported.
pub const DEFAULT_OVERLAP_EPSILON: f64 = 1e-14;
/// Smallest post-selection probability for which outcome probabilities are reported.
pub const DEFAULT_POSTSELECTION_FLOOR: f64 = 1e-30;
/// Half-width of the meter integration window, in meter standard deviations.
pub const SPLIT_RANGE_SIGMAS: f64 = 8.0;
/// Relative tolerance of every meter integral.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;

const NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;

/// `sqrt(2/pi)`, the mean of `|u|` for a unit-variance Gaussian.
pub fn sqrt_two_over_pi() -> f64 {
    (2.0 / PI).sqrt()
}

/// Returns true when `theta` is an integer multiple of pi to working precision.
pub(crate) fn is_cot_singular(theta: f64) -> bool {
    theta.sin().abs() <= 4.0 * f64::EPSILON * theta.abs().max(1.0)
}

/// Normalized state of the two-level system in the `{|a1>, |a2>}` basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelState {
    a1: Complex64,
    a2: Complex64,
}

impl TwoLevelState {
    pub fn new(a1: Complex64, a2: Complex64) -> Result<Self> {
        let norm = a1.norm_sqr() + a2.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "state is not normalized: |a1|^2 + |a2|^2 = {norm}"
            )));
        }
        Ok(Self { a1, a2 })
    }

    /// Rescales `(a1, a2)` to unit norm.
    pub fn normalized(a1: Complex64, a2: Complex64) -> Result<Self> {
        let norm = (a1.norm_sqr() + a2.norm_sqr()).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter(
                "cannot normalize a zero or non-finite state".into(),
            ));
        }
        Ok(Self {
            a1: a1 / norm,
            a2: a2 / norm,
        })
    }

    pub fn a1(&self) -> Complex64 {
        self.a1
    }

    pub fn a2(&self) -> Complex64 {
        self.a2
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &TwoLevelState) -> Complex64 {
        self.a1.conj() * other.a1 + self.a2.conj() * other.a2
    }
}

/// Hermitian 2x2 observable of the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemObservable {
    m: [[Complex64; 2]; 2],
}

impl Default for SystemObservable {
    fn default() -> Self {
        Self::pauli_z()
    }
}

impl SystemObservable {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let off = (m[0][1] - m[1][0].conj()).norm();
        let diag = m[0][0].im.abs().max(m[1][1].im.abs());
        if off > HERMITIAN_TOL || diag > HERMITIAN_TOL {
            return Err(Error::InvalidParameter(format!(
                "observable is not Hermitian (off-diagonal mismatch {off:e}, imaginary diagonal {diag:e})"
            )));
        }
        Ok(Self { m })
    }

    /// `diag(+1, -1)` in the `{|a1>, |a2>}` basis.
    pub fn pauli_z() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            m: [[one, zero], [zero, -one]],
        }
    }

    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    /// `<bra|A|ket>`.
    pub fn matrix_element(&self, bra: &TwoLevelState, ket: &TwoLevelState) -> Complex64 {
        let m = &self.m;
        let a1 = m[0][0] * ket.a1 + m[0][1] * ket.a2;
        let a2 = m[1][0] * ket.a1 + m[1][1] * ket.a2;
        bra.a1.conj() * a1 + bra.a2.conj() * a2
    }

    /// Eigenvalues and orthonormal eigenvectors, largest eigenvalue first.
    pub fn eigen(&self) -> [(f64, [Complex64; 2]); 2] {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = self.m[0][1];
        let mean = 0.5 * (a + d);
        let half_gap = 0.5 * (a - d);
        let r = (half_gap * half_gap + b.norm_sqr()).sqrt();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);

        if b.norm() == 0.0 {
            return if a >= d {
                [(a, [one, zero]), (d, [zero, one])]
            } else {
                [(d, [zero, one]), (a, [one, zero])]
            };
        }

        let vector = |lambda: f64| {
            let v = [b, Complex64::new(lambda - a, 0.0)];
            let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            [v[0] / n, v[1] / n]
        };
        let hi = mean + r;
        let lo = mean - r;
        [(hi, vector(hi)), (lo, vector(lo))]
    }
}

/// Gaussian meter with amplitude `f(q) = (2/(πσ²))^{1/4} exp(-q²/σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterSpec {
    sigma: f64,
}

impl MeterSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "meter width sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Standard deviation of the conjugate meter variable, `1/σ`.
    pub fn momentum_std(&self) -> f64 {
        1.0 / self.sigma
    }

    /// Density of the conjugate meter variable.
    pub fn momentum_density(&self, u: f64) -> f64 {
        let s = self.sigma;
        s / (2.0 * PI).sqrt() * (-0.5 * u * u * s * s).exp()
    }

    /// Half-width of the split integration window.
    pub fn split_range(&self) -> f64 {
        SPLIT_RANGE_SIGMAS / self.sigma
    }
}

/// Which pre/post-selected pair the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Selection {
    /// `|φi> = (|a1>+|a2>)/√2` and the post-selection angle family `|φf(θ)>`.
    Angle,
    /// A fixed pair; the angle argument of every operation is ignored.
    Fixed {
        pre: TwoLevelState,
        post: TwoLevelState,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakMeasurementModel {
    /// Coupling strength `g`, same length unit as the meter width.
    pub coupling: f64,
    pub meter: MeterSpec,
    pub observable: SystemObservable,
    pub selection: Selection,
}

impl WeakMeasurementModel {
    /// Angle-parameterized model with `A = diag(1, -1)`.
    pub fn angle_family(coupling: f64, sigma: f64) -> Result<Self> {
        if !coupling.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "coupling must be finite, got {coupling}"
            )));
        }
        Ok(Self {
            coupling,
            meter: MeterSpec::new(sigma)?,
            observable: SystemObservable::pauli_z(),
            selection: Selection::Angle,
        })
    }

    pub fn fixed(
        pre: TwoLevelState,
        post: TwoLevelState,
        coupling: f64,
        sigma: f64,
        observable: SystemObservable,
    ) -> Result<Self> {
        let mut model = Self::angle_family(coupling, sigma)?;
        model.observable = observable;
        model.selection = Selection::Fixed { pre, post };
        Ok(model)
    }

    /// `g/σ`, the dimensionless coupling.
    pub fn coupling_ratio(&self) -> f64 {
        self.coupling / self.meter.sigma()
    }

    pub fn states(&self, theta: f64) -> (TwoLevelState, TwoLevelState) {
        match self.selection {
            Selection::Angle => postselect_angle_states(theta),
            Selection::Fixed { pre, post } => (pre, post),
        }
    }

    /// Resolves the selection at `theta` into a concrete measurement.
    pub fn at(&self, theta: f64) -> SelectedMeasurement {
        let (pre, post) = self.states(theta);
        SelectedMeasurement::new(self, pre, post)
    }
}

/// A model with both selections fixed. Caches the eigen-decomposition of the
/// Kraus amplitude `M(u) = Σ_k c_k exp(-i g λ_k u)`.
#[derive(Debug, Clone, Copy)]
pub struct SelectedMeasurement {
    pub pre: TwoLevelState,
    pub post: TwoLevelState,
    coupling: f64,
    meter: MeterSpec,
    observable: SystemObservable,
    branches: [(f64, Complex64); 2],
}

impl SelectedMeasurement {
    fn new(model: &WeakMeasurementModel, pre: TwoLevelState, post: TwoLevelState) -> Self {
        let branches = model.observable.eigen().map(|(lambda, v)| {
            let e = TwoLevelState { a1: v[0], a2: v[1] };
            (lambda, post.inner(&e) * e.inner(&pre))
        });
        Self {
            pre,
            post,
            coupling: model.coupling,
            meter: model.meter,
            observable: model.observable,
            branches,
        }
    }

    pub fn overlap(&self) -> Complex64 {
        self.post.inner(&self.pre)
    }

    pub fn kraus_amplitude(&self, u: f64) -> Complex64 {
        self.branches
            .iter()
            .map(|&(lambda, c)| c * Complex64::from_polar(1.0, -self.coupling * lambda * u))
            .sum()
    }

    /// Unnormalized post-selected meter density `|M(u)|² G(u)`.
    pub fn postselected_density(&self, u: f64) -> f64 {
        self.kraus_amplitude(u).norm_sqr() * self.meter.momentum_density(u)
    }

    /// `∫_lo^hi |M(u)|² G(u) du`.
    pub fn density_integral(&self, lo: f64, hi: f64) -> Result<f64> {
        let tol = Tolerance {
            rel: QUADRATURE_REL_TOL,
            abs: 0.0,
            ..Tolerance::default()
        };
        Ok(quadrature::integrate(|u| self.postselected_density(u), lo, hi, tol)?.value)
    }

    /// Masses of the spin-down (`u < 0`) and spin-up (`u > 0`) bins.
    pub fn split_masses(&self) -> Result<(f64, f64)> {
        let r = self.meter.split_range();
        Ok((
            self.density_integral(-r, 0.0)?,
            self.density_integral(0.0, r)?,
        ))
    }

    pub fn postselection_probability(&self) -> Result<f64> {
        let (minus, plus) = self.split_masses()?;
        Ok((minus + plus).clamp(0.0, 1.0))
    }

    pub fn outcome_probabilities(&self) -> Result<OutcomeProbabilities> {
        let (minus, plus) = self.split_masses()?;
        let p_ps = minus + plus;
        if !(p_ps > DEFAULT_POSTSELECTION_FLOOR) {
            return Err(Error::VanishingPostselection {
                probability: p_ps,
                floor: DEFAULT_POSTSELECTION_FLOOR,
            });
        }
        Ok(OutcomeProbabilities {
            p_plus: plus / p_ps,
            p_minus: minus / p_ps,
            p_ps: p_ps.min(1.0),
        })
    }

    pub fn weak_value(&self) -> Result<Complex64> {
        weak_value(&self.pre, &self.post, &self.observable)
    }

    /// First-order contrast `2g Im(α A_w) / (1 + g²|A_w|²/σ²)` with
    /// `α = sqrt(2/π)/σ` and no real-part (β) term.
    pub fn contrast_general_firstorder(&self) -> Result<f64> {
        let aw = self.weak_value()?;
        let sigma = self.meter.sigma();
        let alpha = sqrt_two_over_pi() / sigma;
        let g = self.coupling;
        Ok(2.0 * g * (alpha * aw).im / (1.0 + g * g / (sigma * sigma) * aw.norm_sqr()))
    }
}

/// Probabilities of the two pointer outcomes, conditional on post-selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub p_plus: f64,
    pub p_minus: f64,
    /// Post-selection success probability.
    pub p_ps: f64,
}

impl OutcomeProbabilities {
    /// Pointer expectation `<O> = p+ - p-`.
    pub fn contrast(&self) -> f64 {
        self.p_plus - self.p_minus
    }
}

/// How outcome probabilities are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityMode {
    /// Quadrature of the exact post-selected density.
    #[default]
    Exact,
    /// First-order (weak-value) formula.
    #[serde(alias = "first_order")]
    FirstOrder,
}

/// Pre-selection `(|a1>+|a2>)/√2` and post-selection
/// `i(e^{-iθ}|a2> - e^{iθ}|a1>)/√2`; the overlap `<post|pre>` is `sin θ`.
pub fn postselect_angle_states(theta: f64) -> (TwoLevelState, TwoLevelState) {
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let pre = TwoLevelState { a1: h, a2: h };
    let i = Complex64::i();
    let post = TwoLevelState {
        a1: -i * Complex64::from_polar(FRAC_1_SQRT_2, theta),
        a2: i * Complex64::from_polar(FRAC_1_SQRT_2, -theta),
    };
    (pre, post)
}

/// `<post|A|pre> / <post|pre>`.
pub fn weak_value(
    pre: &TwoLevelState,
    post: &TwoLevelState,
    obs: &SystemObservable,
) -> Result<Complex64> {
    weak_value_with_epsilon(pre, post, obs, DEFAULT_OVERLAP_EPSILON)
}

pub fn weak_value_with_epsilon(
    pre: &TwoLevelState,
    post: &TwoLevelState,
    obs: &SystemObservable,
    epsilon: f64,
) -> Result<Complex64> {
    let overlap = post.inner(pre);
    if overlap.norm() < epsilon {
        return Err(Error::ZeroOverlap {
            overlap: overlap.norm(),
            epsilon,
        });
    }
    Ok(obs.matrix_element(post, pre) / overlap)
}

/// `M(u) = <post| exp(-i g A u) |pre>`; equals `sin(θ + g u)` for the angle family.
pub fn kraus_amplitude(u: f64, theta: f64, model: &WeakMeasurementModel) -> Complex64 {
    model.at(theta).kraus_amplitude(u)
}

/// `P_ps = ∫ |M(u)|² G(u) du` by adaptive quadrature over `±8/σ`.
pub fn postselection_probability(theta: f64, model: &WeakMeasurementModel) -> Result<f64> {
    model.at(theta).postselection_probability()
}

pub fn outcome_probabilities_exact(
    theta: f64,
    model: &WeakMeasurementModel,
) -> Result<OutcomeProbabilities> {
    model.at(theta).outcome_probabilities()
}

/// First-order pointer contrast
/// `<O> = 2 sqrt(2/π) (g/σ) cot θ / (1 + ((g/σ) cot θ)²)`.
///
/// Evaluated from `g`, `σ` and `θ` alone, whatever the model's selection.
pub fn contrast_firstorder(theta: f64, model: &WeakMeasurementModel) -> Result<f64> {
    if is_cot_singular(theta) {
        return Err(Error::AngleSingularity { theta });
    }
    let x = model.coupling_ratio() / theta.tan();
    Ok(2.0 * sqrt_two_over_pi() * x / (1.0 + x * x))
}

pub fn contrast_general_firstorder(theta: f64, model: &WeakMeasurementModel) -> Result<f64> {
    model.at(theta).contrast_general_firstorder()
}

/// First-order outcome probabilities; `p_ps` is `|<φf|φi>|² (1 + (g/σ)² |A_w|²)`.
pub fn outcome_probabilities_firstorder(
    theta: f64,
    model: &WeakMeasurementModel,
) -> Result<OutcomeProbabilities> {
    let m = model.at(theta);
    let contrast = match model.selection {
        Selection::Angle => contrast_firstorder(theta, model)?,
        Selection::Fixed { .. } => m.contrast_general_firstorder()?,
    };
    let aw = m.weak_value()?;
    let a = model.coupling_ratio();
    let p_ps = (m.overlap().norm_sqr() * (1.0 + a * a * aw.norm_sqr())).min(1.0);
    Ok(OutcomeProbabilities {
        p_plus: 0.5 * (1.0 + contrast),
        p_minus: 0.5 * (1.0 - contrast),
        p_ps,
    })
}

pub fn outcome_probabilities(
    theta: f64,
    model: &WeakMeasurementModel,
    mode: ProbabilityMode,
) -> Result<OutcomeProbabilities> {
    match mode {
        ProbabilityMode::Exact => outcome_probabilities_exact(theta, model),
        ProbabilityMode::FirstOrder => outcome_probabilities_firstorder(theta, model),
    }
}
