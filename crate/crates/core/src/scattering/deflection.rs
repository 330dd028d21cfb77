//! Deflection angle θ(w), turning radius r₀(w) and interior time T(w) for a
//! radial potential supported in the unit ball (unit energy, unit speed outside).
//!
//! With F(r) = 1 − 2W(r) − w²/r², the integrals over [r₀, 1] are taken after
//! the substitution r = r₀ + x². Writing F(r) − F(r₀) = x²·G(x) and
//! eliminating w² = r₀²(1 − 2W(r₀)),
//! G = (r + r₀)/r² − 2(W(r) − W(r₀))/(r − r₀) − 2W(r₀)(r + r₀)/r², which stays
//! accurate when r₀ is tiny and W singular. The integrands become smooth in x:
//!
//!   ∫ r⁻² F^{−1/2} dr = ∫₀^X 2 / (r² √G) dx,   ∫ F^{−1/2} dr = ∫₀^X 2 / √G dx,
//!
//! with X = √(1 − r₀). The part of the orbit outside r = 1 contributes exactly
//! 2 arcsin w to the deflection.

use std::f64::consts::PI;

use super::profile::PotentialProfile;
use crate::error::{Error, Result};
use crate::quadrature;

const ABS_TOL: f64 = 1e-13;
const REL_TOL: f64 = 1e-13;

fn radial_f(p: &PotentialProfile, w: f64, r: f64) -> f64 {
    1.0 - 2.0 * p.value(r) - (w * w) / (r * r)
}

/// Largest root of 1 − 2W(r) − w²/r² on (0, 1].
///
/// Scans downward from r = 1 on a uniform grid (then geometrically below the
/// first grid cell) for the first sign change, and bisects it.
pub fn turning_radius(p: &PotentialProfile, w: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::ImpactOutOfRange(w));
    }
    const STEPS: usize = 1024;
    let mut hi = 1.0;
    let mut found = None;
    for k in 1..STEPS {
        let r = 1.0 - k as f64 / STEPS as f64;
        if radial_f(p, w, r) <= 0.0 {
            found = Some((r, hi));
            break;
        }
        hi = r;
    }
    if found.is_none() {
        let mut r = hi;
        while r > 1e-300 {
            let next = 0.5 * r;
            if radial_f(p, w, next) <= 0.0 {
                found = Some((next, r));
                break;
            }
            r = next;
        }
    }
    let (mut lo, mut hi) = found.ok_or(Error::NoTurningPoint(w))?;
    // F(lo) ≤ 0 < F(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if radial_f(p, w, mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// G(x) with F(r₀ + x²) − F(r₀) = x² G(x).
fn g_factor(p: &PotentialProfile, r0: f64, r: f64) -> f64 {
    (r + r0) / (r * r) + p.orbit_core(r0, r)
}

fn orbit_integral(p: &PotentialProfile, w: f64, r0: f64, weight: impl Fn(f64) -> f64) -> Result<f64> {
    let x_max = (1.0 - r0).max(0.0).sqrt();
    if x_max == 0.0 {
        return Ok(0.0);
    }
    let mut bad = false;
    let val = quadrature::adaptive(
        |x| {
            let r = r0 + x * x;
            let g = g_factor(p, r0, r);
            if g > 0.0 {
                weight(r) / g.sqrt()
            } else {
                bad = true;
                0.0
            }
        },
        0.0,
        x_max,
        ABS_TOL,
        REL_TOL,
    )?;
    if bad {
        return Err(Error::Quadrature(format!(
            "turning point at w = {w} is not a simple root"
        )));
    }
    Ok(val)
}

/// θ(w) = π − 2 arcsin w − 2w ∫_{r₀}^1 r⁻² F(r)^{−1/2} dr, for 0 < w < 1.
pub fn deflection_angle(p: &PotentialProfile, w: f64) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::ImpactOutOfRange(w));
    }
    let r0 = turning_radius(p, w)?;
    let inner = orbit_integral(p, w, r0, |r| 2.0 / (r * r))?;
    Ok(PI - 2.0 * w.asin() - 2.0 * w * inner)
}

/// T(w) = 2 ∫_{r₀}^1 F(r)^{−1/2} dr, the time spent inside the unit ball.
pub fn scattering_time(p: &PotentialProfile, w: f64) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::ImpactOutOfRange(w));
    }
    let r0 = turning_radius(p, w)?;
    Ok(2.0 * orbit_integral(p, w, r0, |_| 2.0)?)
}

/// θ at w → 0⁺: the multiple of π closest to θ(10⁻⁹).
pub fn deflection_at_zero(p: &PotentialProfile) -> Result<f64> {
    let t = deflection_angle(p, 1e-9)?;
    Ok(PI * (t / PI).round())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mt_root(alpha: f64, w: f64) -> f64 {
        // positive root of (1 + 2α) r² − 2α r − w² = 0
        (alpha + (alpha * alpha + (1.0 + 2.0 * alpha) * w * w).sqrt()) / (1.0 + 2.0 * alpha)
    }

    #[test]
    fn muffin_tin_turning_radius_matches_quadratic() {
        let p = PotentialProfile::muffin_tin(1.0).unwrap();
        for w in [0.05, 0.3, 0.5, 0.9, 0.999] {
            let r0 = turning_radius(&p, w).unwrap();
            assert!((r0 - mt_root(1.0, w)).abs() < 1e-13, "w={w}: {r0}");
        }
    }

    #[test]
    fn steep_wall_turning_radius_near_one() {
        let p = PotentialProfile::linear_wall(1e6).unwrap();
        let r0 = turning_radius(&p, 0.5).unwrap();
        assert!((1.0 - r0) < 1e-5);
    }

    #[test]
    fn turning_radius_tends_to_one_at_grazing() {
        let p = PotentialProfile::muffin_tin(1.0).unwrap();
        let r0 = turning_radius(&p, 1.0 - 1e-10).unwrap();
        assert!(1.0 - r0 < 1e-9);
    }

    #[test]
    fn muffin_tin_deflection_example() {
        let p = PotentialProfile::muffin_tin(1.0).unwrap();
        let t = deflection_angle(&p, 0.5f64.sqrt()).unwrap();
        assert!((t - 2.0 * 0.5f64.atan()).abs() < 1e-10, "{t}");
        let near_grazing = deflection_angle(&p, 1.0 - 1e-12).unwrap();
        assert!(near_grazing.abs() < 1e-5);
    }

    #[test]
    fn steep_wall_deflection_is_hard_sphere_like() {
        let p = PotentialProfile::linear_wall(1e4).unwrap();
        let t = deflection_angle(&p, 0.5).unwrap();
        assert!((t - (PI - 2.0 * 0.5f64.asin())).abs() < 1e-2);
        let time = scattering_time(&p, 0.5).unwrap();
        assert!(time < 0.05);
    }

    #[test]
    fn attractive_muffin_tin_zero_limit() {
        let p = PotentialProfile::muffin_tin(-2.0).unwrap();
        assert!((deflection_at_zero(&p).unwrap() + PI).abs() < 1e-12);
        let q = PotentialProfile::muffin_tin(2.0).unwrap();
        assert!((deflection_at_zero(&q).unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_impact_rejected() {
        let p = PotentialProfile::muffin_tin(1.0).unwrap();
        assert!(deflection_angle(&p, 1.0).is_err());
        assert!(deflection_angle(&p, 0.0).is_err());
    }
}
