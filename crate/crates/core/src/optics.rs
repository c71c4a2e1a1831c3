//! Spin Hall effect of light at an air-glass interface as the weak coupling.
//!
//! Reflection splits the two circular polarizations by `±δ_H`, with
//! `δ_H = cot θ_i (1 + r_s/r_p) / k0`. That shift is the coupling `g` of the
//! abstract model; the beam width is the meter width.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, WeakMeasurementModel};

/// Below this `|r_p|` the shift is treated as singular.
pub const BREWSTER_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalSetup {
    /// Vacuum wavelength in nm.
    pub wavelength: f64,
    /// Incidence angle in rad.
    pub theta_i: f64,
    /// Refractive index of the reflecting medium.
    pub n: f64,
    /// Beam width in μm.
    pub sigma: f64,
}

impl Default for OpticalSetup {
    /// He-Ne laser on a BK7 prism at 30° incidence, 27 μm beam.
    fn default() -> Self {
        Self {
            wavelength: 632.8,
            theta_i: PI / 6.0,
            n: 1.515,
            sigma: 27.0,
        }
    }
}

impl OpticalSetup {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return bad("wavelength must be positive");
        }
        if !(self.theta_i > 0.0 && self.theta_i < PI / 2.0) {
            return bad("incidence angle must lie in (0, pi/2)");
        }
        if !(self.n.is_finite() && self.n > 1.0) {
            return bad("refractive index must exceed 1");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("beam width sigma must be positive");
        }
        Ok(())
    }

    /// Vacuum wave number in μm⁻¹.
    pub fn k0(&self) -> f64 {
        2.0 * PI / (self.wavelength * 1e-3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FresnelCoefficients {
    pub r_p: f64,
    pub r_s: f64,
}

/// Amplitude reflection coefficients for external reflection.
///
/// `r_p = (n cos θi − cos θt)/(n cos θi + cos θt)`,
/// `r_s = (cos θi − n cos θt)/(cos θi + n cos θt)`, `sin θt = sin θi / n`.
/// Only the incidence angle and index are used, so this also accepts `θi = 0`
/// and `n = 1`, which [`OpticalSetup::validate`] rejects.
pub fn fresnel(setup: &OpticalSetup) -> Result<FresnelCoefficients> {
    let sin_t = setup.theta_i.sin() / setup.n;
    if !(sin_t.abs() < 1.0) {
        return Err(Error::TotalInternalReflection { sin_t });
    }
    let cos_i = setup.theta_i.cos();
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let n = setup.n;
    Ok(FresnelCoefficients {
        r_p: (n * cos_i - cos_t) / (n * cos_i + cos_t),
        r_s: (cos_i - n * cos_t) / (cos_i + n * cos_t),
    })
}

/// Signed spin-dependent shift `δ_H` in μm.
pub fn shel_shift(setup: &OpticalSetup) -> Result<f64> {
    let r = fresnel(setup)?;
    if r.r_p.abs() < BREWSTER_EPSILON {
        return Err(Error::BrewsterSingularity { r_p: r.r_p });
    }
    Ok((1.0 / setup.theta_i.tan()) * (1.0 + r.r_s / r.r_p) / setup.k0())
}

/// Angle-family model with `g = δ_H` and meter width `σ`.
pub fn to_model(setup: &OpticalSetup) -> Result<WeakMeasurementModel> {
    let g = shel_shift(setup)?;
    WeakMeasurementModel::angle_family(g, setup.sigma)
}

/// Contrast ratio written directly in the optical parameters:
/// `2 sqrt(2/π) k0 σ r_p (r_p+r_s) cot θi cot θ / (k0²σ²r_p² + (r_p+r_s)² cot²θi cot²θ)`.
pub fn shel_contrast(theta: f64, setup: &OpticalSetup) -> Result<f64> {
    if model::is_cot_singular(theta) {
        return Err(Error::AngleSingularity { theta });
    }
    let r = fresnel(setup)?;
    let k0s = setup.k0() * setup.sigma;
    let cot_i = 1.0 / setup.theta_i.tan();
    let cot = 1.0 / theta.tan();
    let sum = r.r_p + r.r_s;
    let num = 2.0 * model::sqrt_two_over_pi() * k0s * r.r_p * sum * cot_i * cot;
    let den = k0s * k0s * r.r_p * r.r_p + sum * sum * cot_i * cot_i * cot * cot;
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::contrast_firstorder;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup_at(theta_i: f64, n: f64) -> OpticalSetup {
        OpticalSetup {
            theta_i,
            n,
            ..OpticalSetup::default()
        }
    }

    #[test]
    fn normal_incidence() {
        let r = fresnel(&setup_at(0.0, 1.515)).unwrap();
        let expected = 0.515 / 2.515;
        assert_relative_eq!(r.r_p.abs(), expected, max_relative = 1e-14);
        assert_relative_eq!(r.r_s.abs(), expected, max_relative = 1e-14);
        assert!((expected - 0.2047).abs() < 1e-4);
    }

    #[test]
    fn brewster_angle_zeroes_r_p() {
        let r = fresnel(&setup_at(1.515f64.atan(), 1.515)).unwrap();
        assert!(r.r_p.abs() < 1e-15);
        assert!(matches!(
            shel_shift(&setup_at(1.515f64.atan(), 1.515)),
            Err(Error::BrewsterSingularity { .. })
        ));
    }

    #[test]
    fn thirty_degrees_on_bk7() {
        // values from an independent evaluation of the Fresnel formulas
        let r = fresnel(&OpticalSetup::default()).unwrap();
        assert!((r.r_p - 0.163_146_914_242_974_45).abs() < 1e-14);
        assert!((r.r_s + 0.245_668_149_580_870_9).abs() < 1e-14);
    }

    #[test]
    fn shift_for_paper_setup() {
        let setup = OpticalSetup::default();
        let d = shel_shift(&setup).unwrap();
        assert!((d + 0.088_233_617_694_544_73).abs() < 1e-13, "{d}");
        assert!((d / setup.sigma + 3.268e-3).abs() < 1e-5);

        let r = fresnel(&setup).unwrap();
        let by_hand = (1.0 / setup.theta_i.tan()) * (1.0 + r.r_s / r.r_p) / setup.k0();
        assert_eq!(d.to_bits(), by_hand.to_bits());
    }

    #[test]
    fn shift_vanishes_at_grazing_incidence() {
        let d = shel_shift(&setup_at(PI / 2.0 - 1e-9, 1.515)).unwrap();
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn model_mapping() {
        let setup = OpticalSetup::default();
        let m = to_model(&setup).unwrap();
        assert!((m.coupling_ratio() + 3.268e-3).abs() < 1e-5);

        let wide = OpticalSetup {
            sigma: 54.0,
            ..setup
        };
        let m2 = to_model(&wide).unwrap();
        assert_eq!(m2.coupling, m.coupling);
        assert_eq!(m2.meter.sigma(), 54.0);

        let matched = setup_at(0.5, 1.0);
        assert!(matches!(
            to_model(&matched),
            Err(Error::BrewsterSingularity { .. })
        ));
    }

    #[test]
    fn total_internal_reflection_is_guarded() {
        let inside = setup_at(1.2, 0.8);
        assert!(matches!(
            fresnel(&inside),
            Err(Error::TotalInternalReflection { .. })
        ));
    }

    #[test]
    fn closed_form_contrast_examples() {
        let setup = OpticalSetup::default();
        assert!(shel_contrast(PI / 2.0, &setup).unwrap().abs() < 1e-17);
        let c = shel_contrast(0.01, &setup).unwrap();
        assert!((c + 0.471_153_583_906_365_3).abs() < 1e-12, "{c}");
        assert!(matches!(
            shel_contrast(0.0, &setup),
            Err(Error::AngleSingularity { .. })
        ));
    }

    #[test]
    fn closed_form_extremum() {
        let setup = OpticalSetup::default();
        let r = fresnel(&setup).unwrap();
        let cot_peak = setup.k0() * setup.sigma * r.r_p / ((r.r_p + r.r_s) / setup.theta_i.tan());
        let theta_peak = (1.0 / cot_peak).atan();
        let peak = shel_contrast(theta_peak, &setup).unwrap();
        assert_relative_eq!(peak.abs(), model::sqrt_two_over_pi(), max_relative = 1e-12);
        for d in [1e-5, -1e-5] {
            assert!(shel_contrast(theta_peak + d, &setup).unwrap().abs() < peak.abs());
        }
    }

    #[test]
    fn brewster_crossing_is_unique() {
        for n in [1.2, 1.515, 2.4] {
            let rp: Vec<f64> = (1..2000)
                .map(|k| fresnel(&setup_at(k as f64 * PI / 4000.0, n)).unwrap().r_p)
                .collect();
            let crossings = rp
                .windows(2)
                .filter(|w| w[0].signum() != w[1].signum())
                .count();
            assert_eq!(crossings, 1, "n={n}");
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_composition(theta in -0.3f64..0.3) {
            prop_assume!(theta.abs() > 1e-6);
            let setup = OpticalSetup::default();
            let model = to_model(&setup).unwrap();
            let a = shel_contrast(theta, &setup).unwrap();
            let b = contrast_firstorder(theta, &model).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let odd = shel_contrast(-theta, &setup).unwrap();
            prop_assert!((a + odd).abs() < 1e-15);
        }

        #[test]
        fn reflection_is_bounded(theta_i in 0.0f64..1.5, n in 1.01f64..3.0) {
            let r = fresnel(&setup_at(theta_i, n)).unwrap();
            prop_assert!(r.r_p * r.r_p <= 1.0);
            prop_assert!(r.r_s * r.r_s <= 1.0);
        }
    }
}
