//! Scattering maps Ψ: hard-sphere reflection and radial potentials described
//! through their deflection angle θ(w).
//!
//! In the frame of the incoming velocity (v = e1) the incoming impact point is
//! s₋(w) = (−√(1 − |w|²), w), the outgoing velocity is
//! Ψ₁ = cos θ e1 + sin θ (0, ŵ), and the exit point (angular momentum
//! preserved) is Ψ₂ = −|w| sin θ e1 + cos θ (0, w) + √(1 − |w|²) Ψ₁.

pub mod deflection;
pub mod profile;

use std::f64::consts::PI;

use rand::Rng;

pub use deflection::{deflection_angle, deflection_at_zero, scattering_time, turning_radius};
pub use profile::{CubicSpline, PotentialProfile};

use crate::error::{Error, Result};
use crate::geometry::{self, angle, perp, random_in_ball, rotation_to_e1, Direction, Vector};

/// Step used for the centered difference of w(φ).
const DPHI: f64 = 1e-4;
/// Grid size of the cached deflection table and of the dispersing check.
pub const GRID_POINTS: usize = 512;
const GRID_W_MAX: f64 = 1.0 - 1e-4;

/// Specular reflection at the unit-sphere point `b`: v₊ = v − 2(v·b)b, b₊ = b.
pub fn specular_map(v: &Direction, b: &Direction) -> Result<(Direction, Direction)> {
    let vb = v.dot(b);
    if vb >= 0.0 {
        return Err(Error::NotIncoming(vb));
    }
    let vp = v.vector() - b.vector() * (2.0 * vb);
    Ok((Direction::normalize(vp)?, *b))
}

/// Reduces an angle to the deflection angle φ ∈ [0, π] it produces.
pub fn fold_angle(theta: f64) -> f64 {
    (theta - 2.0 * PI * (theta / (2.0 * PI)).round()).abs()
}

/// Outgoing data of one collision.
#[derive(Clone, Copy, Debug)]
pub struct ExitData {
    pub v_plus: Direction,
    /// Exit point on the unit sphere around the scatterer.
    pub b_plus: Direction,
    /// Exit parameter (b₊ R(v₊))_⊥.
    pub w_exit: Vector,
}

/// Result of the dispersing checks for a potential profile.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersingReport {
    /// +1 or −1 when θ is strictly monotone on the grid, 0 otherwise.
    pub theta_prime_sign: i8,
    /// θ(w) stays inside the open window (kπ − π, kπ + π) around θ(0) = kπ.
    pub range_ok: bool,
    /// Sufficient criterion: W convex and W′ ≤ −β on (0, 1).
    pub beta_ok: bool,
    pub theta0: f64,
}

impl DispersingReport {
    pub fn dispersing(&self) -> bool {
        self.theta_prime_sign != 0 && self.range_ok
    }
}

/// Evaluates θ on the check grid; w = 0 uses the limit value.
fn theta_grid(p: &PotentialProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    let theta0 = deflection_at_zero(p)?;
    let mut ws = Vec::with_capacity(GRID_POINTS);
    let mut ts = Vec::with_capacity(GRID_POINTS);
    for i in 0..GRID_POINTS {
        let w = GRID_W_MAX * i as f64 / (GRID_POINTS - 1) as f64;
        ws.push(w);
        ts.push(if i == 0 { theta0 } else { deflection_angle(p, w)? });
    }
    Ok((ws, ts))
}

/// Dispersing checks on a 512-point grid in [0, 1 − 10⁻⁴].
pub fn dispersing_check(p: &PotentialProfile) -> DispersingReport {
    let beta_ok = beta_criterion(p);
    let Ok((_, ts)) = theta_grid(p) else {
        return DispersingReport {
            theta_prime_sign: 0,
            range_ok: false,
            beta_ok,
            theta0: f64::NAN,
        };
    };
    let theta0 = ts[0];
    let k = (theta0 / PI).round();
    let range_ok = ts.iter().all(|t| (t - k * PI).abs() < PI);
    let diffs: Vec<f64> = ts.windows(2).map(|p| p[1] - p[0]).collect();
    let tol = 1e-12;
    let theta_prime_sign = if diffs.iter().all(|&d| d > tol) {
        1
    } else if diffs.iter().all(|&d| d < -tol) {
        -1
    } else {
        0
    };
    DispersingReport {
        theta_prime_sign,
        range_ok,
        beta_ok,
        theta0,
    }
}

fn beta_criterion(p: &PotentialProfile) -> bool {
    let (_, beta) = beta_constant();
    let n = 2048;
    (1..n).all(|i| {
        let r = i as f64 / n as f64;
        let scale = 1.0 + p.second_derivative(r).abs();
        p.derivative(r) <= -beta && p.second_derivative(r) >= -1e-9 * scale
    })
}

/// The constants (α, β) of the sufficient dispersing criterion: α is the root of
/// 2x⁵ + 2x⁴ − 8x³ + 2x² − 7x + 3 in [0, 1] and β = (1+α)²(1−α)/(2α⁴ − α + 2).
pub fn beta_constant() -> (f64, f64) {
    let g = |x: f64| ((((2.0 * x + 2.0) * x - 8.0) * x + 2.0) * x - 7.0) * x + 3.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // g(0) = 3 > 0 > g(1) = −6
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let beta = (1.0 + a).powi(2) * (1.0 - a) / (2.0 * a.powi(4) - a + 2.0);
    (a, beta)
}

/// Cached data of a dispersing radial potential.
#[derive(Clone, Debug)]
pub struct PotentialMap {
    profile: PotentialProfile,
    theta0: f64,
    grid_w: Vec<f64>,
    grid_phi: Vec<f64>,
    phi_lo: f64,
    phi_hi: f64,
}

impl PotentialMap {
    fn phi(&self, w: f64) -> Result<f64> {
        if w <= 0.0 {
            Ok(fold_angle(self.theta0))
        } else if w >= 1.0 {
            Ok(0.0)
        } else {
            Ok(fold_angle(deflection_angle(&self.profile, w)?))
        }
    }

    /// Inverts φ(w) = target on [0, 1] by bracketing on the grid and
    /// Illinois false position.
    fn invert(&self, target: f64) -> Result<f64> {
        if !(self.phi_lo - 1e-12..=self.phi_hi + 1e-12).contains(&target) {
            return Err(Error::OutOfRange(target));
        }
        let n = self.grid_w.len();
        let mut ws: Vec<f64> = self.grid_w.clone();
        let mut ps: Vec<f64> = self.grid_phi.clone();
        ws.push(1.0);
        ps.push(0.0);
        let mut idx = None;
        for i in 0..n {
            let (a, b) = (ps[i] - target, ps[i + 1] - target);
            if a == 0.0 {
                return Ok(ws[i]);
            }
            if a * b <= 0.0 {
                idx = Some(i);
                break;
            }
        }
        let i = idx.ok_or(Error::OutOfRange(target))?;
        let (mut a, mut b) = (ws[i], ws[i + 1]);
        let (mut fa, mut fb) = (ps[i] - target, ps[i + 1] - target);
        if fb == 0.0 {
            return Ok(b);
        }
        let mut side = 0i8;
        for _ in 0..200 {
            let c = (a * fb - b * fa) / (fb - fa);
            if (b - a).abs() < 1e-15 {
                break;
            }
            let fc = self.phi(c)? - target;
            if fc == 0.0 {
                return Ok(c);
            }
            if fc * fb < 0.0 {
                a = b;
                fa = fb;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            b = c;
            fb = fc;
            if (b - a).abs() < 1e-15 * b.abs().max(1e-300) {
                break;
            }
        }
        Ok(b)
    }

    /// |dw/dφ| by centered differences (one-sided near the ends of the range).
    fn dw_dphi(&self, phi: f64) -> Result<f64> {
        let h = DPHI;
        let d = if phi - h >= self.phi_lo && phi + h <= self.phi_hi {
            (self.invert(phi + h)? - self.invert(phi - h)?) / (2.0 * h)
        } else if phi + 2.0 * h <= self.phi_hi {
            (-3.0 * self.invert(phi)? + 4.0 * self.invert(phi + h)? - self.invert(phi + 2.0 * h)?)
                / (2.0 * h)
        } else {
            (3.0 * self.invert(phi)? - 4.0 * self.invert(phi - h)? + self.invert(phi - 2.0 * h)?)
                / (2.0 * h)
        };
        Ok(d.abs())
    }
}

/// A spherically symmetric scattering map.
#[derive(Clone, Debug)]
pub enum ScatteringMap {
    HardSphere,
    Potential(Box<PotentialMap>),
}

impl ScatteringMap {
    pub fn hard_sphere() -> Self {
        ScatteringMap::HardSphere
    }

    /// Builds the deflection table; fails unless the profile is dispersing.
    pub fn potential(profile: PotentialProfile) -> Result<Self> {
        let report = dispersing_check(&profile);
        if !report.dispersing() {
            return Err(Error::param(format!(
                "potential {} is not dispersing: {report:?}",
                profile.label()
            )));
        }
        let (grid_w, thetas) = theta_grid(&profile)?;
        let grid_phi: Vec<f64> = thetas.iter().map(|&t| fold_angle(t)).collect();
        let phi_lo = grid_phi.iter().cloned().fold(0.0f64, f64::min);
        let phi_hi = grid_phi.iter().cloned().fold(0.0f64, f64::max);
        Ok(ScatteringMap::Potential(Box::new(PotentialMap {
            profile,
            theta0: report.theta0,
            grid_w,
            grid_phi,
            phi_lo,
            phi_hi,
        })))
    }

    pub fn is_hard_sphere(&self) -> bool {
        matches!(self, ScatteringMap::HardSphere)
    }

    pub fn label(&self) -> String {
        match self {
            ScatteringMap::HardSphere => "hard_sphere".into(),
            ScatteringMap::Potential(p) => p.profile.label(),
        }
    }

    pub fn profile(&self) -> Option<&PotentialProfile> {
        match self {
            ScatteringMap::HardSphere => None,
            ScatteringMap::Potential(p) => Some(&p.profile),
        }
    }

    /// Deflection angle θ(|w|) for |w| ∈ [0, 1).
    pub fn theta(&self, w: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&w) {
            return Err(Error::ImpactOutOfRange(w));
        }
        match self {
            ScatteringMap::HardSphere => Ok(PI - 2.0 * w.asin()),
            ScatteringMap::Potential(p) => {
                if w < 1e-9 {
                    Ok(p.theta0)
                } else {
                    deflection_angle(&p.profile, w)
                }
            }
        }
    }

    /// Interior time T(|w|) for a unit scatterer; zero for the hard sphere.
    pub fn interior_time(&self, w: f64) -> Result<f64> {
        match self {
            ScatteringMap::HardSphere => Ok(0.0),
            ScatteringMap::Potential(p) => {
                if w < 1e-9 {
                    scattering_time(&p.profile, 1e-9)
                } else {
                    scattering_time(&p.profile, w)
                }
            }
        }
    }

    /// s_Ψ with Ψ₁(v, −v) = s_Ψ v.
    pub fn s_psi(&self) -> f64 {
        match self {
            ScatteringMap::HardSphere => -1.0,
            ScatteringMap::Potential(p) => p.theta0.cos().signum(),
        }
    }

    /// Lower end B_Ψ of the deflection-angle range; 𝒱_v = {v₊ : φ(v, v₊) > B_Ψ}.
    pub fn b_psi(&self) -> f64 {
        match self {
            ScatteringMap::HardSphere => 0.0,
            ScatteringMap::Potential(p) => p.phi_lo,
        }
    }

    /// Outgoing velocity, exit point and exit parameter for incoming velocity
    /// `v` and impact parameter `w` ∈ B₁^{d−1}.
    pub fn exit_data(&self, v: &Direction, w: &Vector) -> Result<ExitData> {
        let d = v.dim();
        if w.dim() + 1 != d {
            return Err(Error::param(format!(
                "impact parameter has {} components, expected {}",
                w.dim(),
                d - 1
            )));
        }
        let wn = w.norm();
        if wn >= 1.0 || !wn.is_finite() {
            return Err(Error::ImpactOutOfRange(wn));
        }
        let r = rotation_to_e1(v);
        let rt = r.transpose();
        let cos_in = (1.0 - wn * wn).sqrt();
        let (v_plus, b_plus) = match self {
            ScatteringMap::HardSphere => {
                let b = Direction::normalize(Vector::with_first(-cos_in, w).rotate(&rt))?;
                let vb = v.dot(&b);
                let vp = Direction::normalize(v.vector() - b.vector() * (2.0 * vb))?;
                (vp, b)
            }
            ScatteringMap::Potential(_) => {
                let theta = self.theta(wn)?;
                let (s, c) = theta.sin_cos();
                let what = if wn > 0.0 { *w * (1.0 / wn) } else { Vector::zeros(d - 1) };
                let vp_frame = Vector::with_first(c, &(what * s));
                let bp_frame = Vector::with_first(-wn * s, &(*w * c)) + vp_frame * cos_in;
                (
                    Direction::normalize(vp_frame.rotate(&rt))?,
                    Direction::normalize(bp_frame.rotate(&rt))?,
                )
            }
        };
        let w_exit = perp(&b_plus.vector().rotate(&rotation_to_e1(&v_plus)));
        Ok(ExitData {
            v_plus,
            b_plus,
            w_exit,
        })
    }

    /// Exit data for an impact parameter drawn uniformly from B₁^{d−1}.
    pub fn sample_exit<R: Rng + ?Sized>(&self, v: &Direction, rng: &mut R) -> Result<ExitData> {
        let w = random_in_ball(rng, v.dim() - 1);
        self.exit_data(v, &w)
    }

    /// |w| producing deflection angle φ.
    pub fn impact_for_deflection(&self, phi: f64) -> Result<f64> {
        match self {
            ScatteringMap::HardSphere => {
                if !(0.0..=PI).contains(&phi) {
                    return Err(Error::OutOfRange(phi));
                }
                Ok((0.5 * phi).cos())
            }
            ScatteringMap::Potential(p) => p.invert(phi),
        }
    }

    /// The impact parameter w with Ψ₁(v, s₋(w)) = v₊, if v₊ ∈ 𝒱_v.
    pub fn impact_for_exit(&self, v: &Direction, v_plus: &Direction) -> Result<Vector> {
        let phi = angle(v, v_plus);
        let wn = self.impact_for_deflection(phi)?;
        let y = v_plus.vector().rotate(&rotation_to_e1(v));
        let py = perp(&y);
        let n = py.norm();
        if n == 0.0 || wn == 0.0 {
            return Ok(Vector::zeros(v.dim() - 1));
        }
        let sign = if wn < 1.0 { self.theta(wn)?.sin().signum() } else { 1.0 };
        Ok(py * (sign * wn / n))
    }

    /// Differential cross section as a function of the deflection angle.
    pub fn cross_section_angle(&self, phi: f64, d: usize) -> f64 {
        match self {
            ScatteringMap::HardSphere => {
                // ¼‖v − v₊‖^{3−d} with ‖v − v₊‖ = 2 sin(φ/2)
                0.25 * (2.0 * (0.5 * phi).sin()).powi(3 - d as i32)
            }
            ScatteringMap::Potential(p) => {
                if phi <= p.phi_lo || phi > p.phi_hi + 1e-12 {
                    return 0.0;
                }
                let phi = phi.min(p.phi_hi);
                let Ok(dw) = p.dw_dphi(phi) else { return 0.0 };
                if d == 2 {
                    dw
                } else {
                    let s = phi.sin();
                    if s < 1e-12 {
                        // w/sin φ → |dw/dφ| at φ = π
                        return dw * dw;
                    }
                    let w = p.invert(phi).unwrap_or(0.0);
                    (w / s) * dw
                }
            }
        }
    }

    /// σ(v, v₊); zero outside the admissible cone.
    pub fn cross_section(&self, v: &Direction, v_plus: &Direction) -> f64 {
        let d = v.dim();
        match self {
            ScatteringMap::HardSphere => 0.25 * (v.vector() - v_plus.vector()).norm().powi(3 - d as i32),
            ScatteringMap::Potential(_) => self.cross_section_angle(angle(v, v_plus), d),
        }
    }

    /// ∫ σ(v, v₊) dv₊ over the sphere, by Gauss-Legendre in the deflection angle.
    pub fn total_cross_section(&self, d: usize) -> f64 {
        let (lo, hi) = match self {
            ScatteringMap::HardSphere => (0.0, PI),
            ScatteringMap::Potential(p) => (p.phi_lo, p.phi_hi),
        };
        let rule = crate::quadrature::rule(128);
        match d {
            2 => 2.0 * rule.integrate(lo, hi, |phi| self.cross_section_angle(phi, 2)),
            _ => {
                2.0 * PI
                    * rule.integrate(lo, hi, |phi| self.cross_section_angle(phi, 3) * phi.sin())
            }
        }
    }
}

/// v_{d−1}: total scattering cross section of a unit scatterer.
pub fn total_cross_section_exact(d: usize) -> f64 {
    geometry::unit_ball_volume(d - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_on_reversal() {
        let e1 = Direction::e1(2);
        let (vp, bp) = specular_map(&e1, &-e1).unwrap();
        assert!((vp.vector() + e1.vector()).norm() < 1e-15);
        assert_eq!(bp, -e1);
    }

    #[test]
    fn specular_example() {
        let v = Direction::e1(2);
        let b = Direction::normalize(Vector::new(&[-(3f64.sqrt()) / 2.0, 0.5])).unwrap();
        let (vp, _) = specular_map(&v, &b).unwrap();
        assert!((vp.vector() - Vector::new(&[-0.5, 3f64.sqrt() / 2.0])).norm() < 1e-15);
        assert!(specular_map(&v, &-b).is_err());
    }

    #[test]
    fn hard_sphere_zero_impact_reverses() {
        let m = ScatteringMap::hard_sphere();
        for d in [2, 3] {
            let v = Direction::random(&mut ChaCha8Rng::seed_from_u64(d as u64), d);
            let ex = m.exit_data(&v, &Vector::zeros(d - 1)).unwrap();
            assert!((ex.v_plus.vector() + v.vector()).norm() < 1e-12);
            assert!(ex.w_exit.norm() < 1e-12);
        }
        assert_eq!(m.s_psi(), -1.0);
    }

    #[test]
    fn hard_sphere_recovers_cos_half_angle() {
        let m = ScatteringMap::hard_sphere();
        let v = Direction::e1(2);
        let ex = m.exit_data(&v, &Vector::new(&[0.5])).unwrap();
        let phi = angle(&v, &ex.v_plus);
        assert!((phi - 2.0 * 0.5f64.acos()).abs() < 1e-12);
        assert!(((0.5 * phi).cos() - 0.5).abs() < 1e-12);
        assert!((ex.w_exit.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hard_sphere_sigma_values() {
        let m = ScatteringMap::hard_sphere();
        assert!((m.cross_section_angle(2.0 * PI / 3.0, 2) - 3f64.sqrt() / 4.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let v = Direction::random(&mut rng, 3);
            let vp = Direction::random(&mut rng, 3);
            assert_eq!(m.cross_section(&v, &vp), 0.25);
        }
    }

    #[test]
    fn beta_constant_matches_printed_digits() {
        let (a, b) = beta_constant();
        assert_eq!((a * 1e4).floor() / 1e4, 0.4093);
        assert_eq!((b * 1e4).floor() / 1e4, 0.7124);
        let g = 2.0 * a.powi(5) + 2.0 * a.powi(4) - 8.0 * a.powi(3) + 2.0 * a * a - 7.0 * a + 3.0;
        assert!(g.abs() < 1e-10);
    }

    #[test]
    fn dispersing_examples() {
        let mt = dispersing_check(&PotentialProfile::muffin_tin(1.0).unwrap());
        assert!(mt.dispersing());
        assert!(mt.beta_ok);
        let eaton = dispersing_check(&PotentialProfile::MuffinTin { alpha: -1.0 });
        assert!(!eaton.dispersing());
        assert_eq!(eaton.theta_prime_sign, 0);
        let lin = dispersing_check(&PotentialProfile::linear_wall(1.0).unwrap());
        assert!(lin.beta_ok);
        assert!(lin.dispersing());
        assert!(ScatteringMap::potential(PotentialProfile::MuffinTin { alpha: -1.0 }).is_err());
    }

    #[test]
    fn potential_exit_is_consistent() {
        let m = ScatteringMap::potential(PotentialProfile::muffin_tin(1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2, 3] {
            for _ in 0..20 {
                let v = Direction::random(&mut rng, d);
                let w = random_in_ball(&mut rng, d - 1);
                let ex = m.exit_data(&v, &w).unwrap();
                let theta = m.theta(w.norm()).unwrap();
                assert!((angle(&v, &ex.v_plus) - fold_angle(theta)).abs() < 1e-9);
                assert!((ex.w_exit.norm() - w.norm()).abs() < 1e-9);
                let back = m.impact_for_exit(&v, &ex.v_plus).unwrap();
                assert!((back - w).norm() < 1e-8, "{back:?} vs {w:?}");
            }
        }
    }

    #[test]
    fn muffin_tin_sigma_normalizes() {
        let m = ScatteringMap::potential(PotentialProfile::muffin_tin(1.0).unwrap()).unwrap();
        assert!((m.total_cross_section(2) - 2.0).abs() < 1e-6);
        assert!((m.total_cross_section(3) - PI).abs() < 1e-6);
    }
}
