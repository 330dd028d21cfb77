//! Scatterer configurations: Poisson, lattices, periodic unions of lattice
//! translates, and cut-and-project sets. All of them answer two queries:
//! points in a ball, and the ordered scatterers met by a tube around a ray.

mod enumerate;
mod window;

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use enumerate::BoxEnumerator;
pub use window::Window;

use crate::error::{Error, Result};
use crate::geometry::{Direction, Vector};

/// Largest radius accepted by [`ScattererConfiguration::points_in_ball`].
pub const RADIUS_GUARD: f64 = 1e4;

/// Marks ς(p) attached to the points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mark {
    Trivial,
    /// 1-based index of the lattice translate.
    Component(usize),
    /// Internal-space coordinate of a cut-and-project point.
    Internal(Vector),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedPoint {
    pub position: Vector,
    pub mark: Mark,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHitCandidate {
    pub center: MarkedPoint,
    /// Time of first entry into the ball of radius ρ around the centre.
    pub flight_time: f64,
    /// Distance of the centre from the ray.
    pub impact_offset: f64,
}

/// Description of a configuration, as found in the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigSpec {
    Poisson {
        intensity: f64,
        seed: u64,
        dim: usize,
    },
    /// Z^d.
    Cubic { dim: usize },
    /// Lattice Z^d g; rows of `basis` are the generators.
    Lattice { basis: Vec<Vec<f64>> },
    /// ⋃_j (Z^d + b_j) g with offsets b_j in lattice coordinates.
    PeriodicUnion {
        basis: Vec<Vec<f64>>,
        offsets: Vec<Vec<f64>>,
    },
    /// Physical projections of x ∈ Z^n M whose last n − dim coordinates lie in the window.
    CutAndProject {
        basis: Vec<Vec<f64>>,
        dim: usize,
        window: Window,
    },
    Honeycomb,
    /// Generically rotated Z⁴ with a square window of area 0.3.
    Z4Toy,
    AmmannBeenker,
}

impl ConfigSpec {
    pub fn poisson(intensity: f64, seed: u64, dim: usize) -> Self {
        ConfigSpec::Poisson { intensity, seed, dim }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ConfigSpec::Poisson { .. } => "poisson",
            ConfigSpec::Cubic { .. } => "cubic",
            ConfigSpec::Lattice { .. } => "lattice",
            ConfigSpec::PeriodicUnion { .. } => "periodic_union",
            ConfigSpec::CutAndProject { .. } => "cut_and_project",
            ConfigSpec::Honeycomb => "honeycomb",
            ConfigSpec::Z4Toy => "z4_toy",
            ConfigSpec::AmmannBeenker => "ammann_beenker",
        }
    }

    /// Expands the named presets into their generic form.
    pub fn expand(&self) -> ConfigSpec {
        match self {
            ConfigSpec::Cubic { dim } => ConfigSpec::Lattice {
                basis: (0..*dim).map(|i| (0..*dim).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
            },
            ConfigSpec::Honeycomb => ConfigSpec::PeriodicUnion {
                basis: honeycomb_basis(),
                offsets: vec![vec![0.0, 0.0], vec![1.0 / 3.0, 1.0 / 3.0]],
            },
            ConfigSpec::Z4Toy => ConfigSpec::CutAndProject {
                basis: z4_toy_basis(),
                dim: 2,
                window: Window::square(0.3),
            },
            ConfigSpec::AmmannBeenker => ConfigSpec::CutAndProject {
                basis: ammann_beenker_basis(),
                dim: 2,
                window: Window::regular_octagon(1.0),
            },
            other => other.clone(),
        }
    }
}

pub fn honeycomb_basis() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]
}

/// Rows (cos kπ/4, sin kπ/4, cos 3kπ/4, sin 3kπ/4), k = 0..3.
pub fn ammann_beenker_basis() -> Vec<Vec<f64>> {
    use std::f64::consts::FRAC_PI_4;
    (0..4)
        .map(|k| {
            let a = k as f64 * FRAC_PI_4;
            vec![a.cos(), a.sin(), (3.0 * a).cos(), (3.0 * a).sin()]
        })
        .collect()
}

/// Z⁴ under a fixed product of plane rotations with unrelated angles.
pub fn z4_toy_basis() -> Vec<Vec<f64>> {
    let planes = [(0, 2, 0.7), (1, 3, 1.1), (0, 1, 0.3), (2, 3, 0.5), (0, 3, 0.9), (1, 2, 0.2)];
    let mut m = nalgebra::Matrix4::<f64>::identity();
    for (i, j, a) in planes {
        let mut g = nalgebra::Matrix4::<f64>::identity();
        let (s, c) = f64::sin_cos(a);
        g[(i, i)] = c;
        g[(j, j)] = c;
        g[(i, j)] = -s;
        g[(j, i)] = s;
        m *= g;
    }
    (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
}

#[derive(Clone, Debug)]
struct PoissonCells {
    seed: u64,
    dist: Poisson<f64>,
}

impl PoissonCells {
    fn cell_seed(&self, cell: &[i64]) -> u64 {
        // SplitMix64 finalizer over the seed and each coordinate.
        let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        for &c in cell {
            h = h.wrapping_add(c as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
            h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            h ^= h >> 31;
        }
        h
    }

    fn cell_points<F: FnMut(Vector)>(&self, cell: &[i64], f: &mut F) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cell_seed(cell));
        let k = self.dist.sample(&mut rng) as usize;
        let d = cell.len();
        for _ in 0..k {
            let mut p = Vector::zeros(d);
            for i in 0..d {
                p.as_mut_slice()[i] = cell[i] as f64 + rng.random::<f64>();
            }
            f(p);
        }
    }
}

#[derive(Clone, Debug)]
struct Periodic {
    lattice: BoxEnumerator,
    /// Offsets b_j g in physical coordinates.
    shifts: Vec<Vector>,
    union: bool,
}

#[derive(Clone, Debug)]
struct CutProject {
    lattice: BoxEnumerator,
    window: Window,
    win_lo: Vec<f64>,
    win_hi: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Family {
    Poisson(PoissonCells),
    Periodic(Periodic),
    CutAndProject(CutProject),
}

/// An immutable, queryable scatterer configuration.
#[derive(Clone, Debug)]
pub struct ScattererConfiguration {
    spec: ConfigSpec,
    family: Family,
    dim: usize,
    density: f64,
}

pub fn build_configuration(spec: &ConfigSpec) -> Result<ScattererConfiguration> {
    ScattererConfiguration::new(spec)
}

fn check_phys_dim(d: usize) -> Result<()> {
    if !(2..=3).contains(&d) {
        return Err(Error::param(format!("physical dimension {d} not in {{2, 3}}")));
    }
    Ok(())
}

impl ScattererConfiguration {
    pub fn new(spec: &ConfigSpec) -> Result<Self> {
        let (family, dim, density) = match spec.expand() {
            ConfigSpec::Poisson { intensity, seed, dim } => {
                check_phys_dim(dim)?;
                if !(intensity > 0.0 && intensity.is_finite()) {
                    return Err(Error::param(format!("Poisson intensity {intensity} must be positive")));
                }
                let dist = Poisson::new(intensity).map_err(|e| Error::param(e.to_string()))?;
                (Family::Poisson(PoissonCells { seed, dist }), dim, intensity)
            }
            ConfigSpec::Lattice { basis } => {
                let d = basis.len();
                check_phys_dim(d)?;
                let lattice = BoxEnumerator::new(&basis)?;
                let density = 1.0 / lattice.covolume();
                let p = Periodic { lattice, shifts: vec![Vector::zeros(d)], union: false };
                (Family::Periodic(p), d, density)
            }
            ConfigSpec::PeriodicUnion { basis, offsets } => {
                let d = basis.len();
                check_phys_dim(d)?;
                let lattice = BoxEnumerator::new(&basis)?;
                if offsets.is_empty() || offsets.iter().any(|b| b.len() != d || b.iter().any(|x| !x.is_finite())) {
                    return Err(Error::param("offsets must be nonempty finite vectors of the lattice dimension"));
                }
                for (i, a) in offsets.iter().enumerate() {
                    for b in &offsets[..i] {
                        let same = a.iter().zip(b).all(|(x, y)| {
                            let t = x - y;
                            (t - t.round()).abs() < 1e-12
                        });
                        if same {
                            return Err(Error::param("offsets coincide modulo Z^d"));
                        }
                    }
                }
                let shifts = offsets
                    .iter()
                    .map(|b| {
                        let mut s = Vector::zeros(d);
                        for j in 0..d {
                            s.as_mut_slice()[j] = (0..d).map(|i| b[i] * basis[i][j]).sum();
                        }
                        s
                    })
                    .collect::<Vec<_>>();
                let density = offsets.len() as f64 / lattice.covolume();
                (Family::Periodic(Periodic { lattice, shifts, union: true }), d, density)
            }
            ConfigSpec::CutAndProject { basis, dim, window } => {
                check_phys_dim(dim)?;
                let lattice = BoxEnumerator::new(&basis)?;
                let m = lattice.dim().checked_sub(dim).filter(|&m| m >= 1).ok_or_else(|| {
                    Error::param("cut-and-project basis must have more columns than the physical dimension")
                })?;
                let window = window.validated()?;
                if window.dim() != m {
                    return Err(Error::param(format!("window lives in R^{} but internal space is R^{m}", window.dim())));
                }
                let density = window.measure() / lattice.covolume();
                let (win_lo, win_hi) = window.bounding_box();
                let cp = CutProject { lattice, window, win_lo, win_hi };
                (Family::CutAndProject(cp), dim, density)
            }
            ConfigSpec::Cubic { .. } | ConfigSpec::Honeycomb | ConfigSpec::Z4Toy | ConfigSpec::AmmannBeenker => {
                unreachable!("presets are expanded")
            }
        };
        let cfg = ScattererConfiguration { spec: spec.clone(), family, dim, density };
        if let Family::CutAndProject(_) = cfg.family {
            cfg.check_cut_and_project()?;
        }
        Ok(cfg)
    }

    /// Sampled checks: no two points share a physical position, and the point
    /// count in a ball is compatible with μ(W)/covol (dense internal projection).
    fn check_cut_and_project(&self) -> Result<()> {
        let d = self.dim;
        let target = 2000.0;
        let r = (target / (self.density * crate::geometry::unit_ball_volume(d))).powf(1.0 / d as f64);
        let mut pts = self.points_in_ball(&Vector::zeros(d), r.min(RADIUS_GUARD))?;
        pts.sort_by(|a, b| a.position.lex_cmp(&b.position));
        for w in pts.windows(2) {
            if (w[0].position - w[1].position).norm() < 1e-9 {
                return Err(Error::NotInjective(format!("two lattice points project to {:?}", w[0].position)));
            }
        }
        let expected = self.density * crate::geometry::unit_ball_volume(d) * r.powi(d as i32);
        let ratio = pts.len() as f64 / expected;
        if !(0.8..=1.25).contains(&ratio) {
            return Err(Error::param(format!(
                "point count {} vs μ(W)/covol prediction {expected:.0}: internal projection not dense",
                pts.len()
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> &ConfigSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Asymptotic density c_P.
    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn is_poisson(&self) -> bool {
        matches!(self.family, Family::Poisson(_))
    }

    /// Visits every point in the closed box [lo, hi]. Cells/lattice slices for
    /// which `keep_cell` is false may be skipped (Poisson only).
    fn for_each_in_box<F, K>(&self, lo: &[f64], hi: &[f64], keep_cell: K, mut f: F)
    where
        F: FnMut(MarkedPoint),
        K: Fn(&[f64], &[f64]) -> bool,
    {
        let d = self.dim;
        let inside = |p: &Vector| (0..d).all(|i| p[i] >= lo[i] && p[i] <= hi[i]);
        match &self.family {
            Family::Poisson(cells) => {
                let a: Vec<i64> = lo.iter().map(|x| x.floor() as i64).collect();
                let b: Vec<i64> = hi.iter().map(|x| x.floor() as i64).collect();
                let mut cell = a.clone();
                loop {
                    let clo: Vec<f64> = cell.iter().map(|&c| c as f64).collect();
                    let chi: Vec<f64> = clo.iter().map(|c| c + 1.0).collect();
                    if keep_cell(&clo, &chi) {
                        cells.cell_points(&cell, &mut |p| {
                            if inside(&p) {
                                f(MarkedPoint { position: p, mark: Mark::Trivial });
                            }
                        });
                    }
                    // odometer increment
                    let mut k = 0;
                    loop {
                        if k == d {
                            return;
                        }
                        if cell[k] < b[k] {
                            cell[k] += 1;
                            break;
                        }
                        cell[k] = a[k];
                        k += 1;
                    }
                }
            }
            Family::Periodic(p) => {
                for (j, s) in p.shifts.iter().enumerate() {
                    let slo: Vec<f64> = (0..d).map(|i| lo[i] - s[i]).collect();
                    let shi: Vec<f64> = (0..d).map(|i| hi[i] - s[i]).collect();
                    let mark = if p.union { Mark::Component(j + 1) } else { Mark::Trivial };
                    p.lattice.for_each(&slo, &shi, |_, y| {
                        let pos = Vector::new(y) + *s;
                        if inside(&pos) {
                            f(MarkedPoint { position: pos, mark });
                        }
                    });
                }
            }
            Family::CutAndProject(cp) => {
                let blo: Vec<f64> = lo.iter().chain(&cp.win_lo).copied().collect();
                let bhi: Vec<f64> = hi.iter().chain(&cp.win_hi).copied().collect();
                cp.lattice.for_each(&blo, &bhi, |_, y| {
                    if cp.window.contains(&y[d..]) {
                        f(MarkedPoint { position: Vector::new(&y[..d]), mark: Mark::Internal(Vector::new(&y[d..])) });
                    }
                });
            }
        }
    }

    /// Points in the open ball B(center, radius).
    pub fn points_in_ball(&self, center: &Vector, radius: f64) -> Result<Vec<MarkedPoint>> {
        if !(radius <= RADIUS_GUARD) {
            return Err(Error::RadiusGuard(radius, RADIUS_GUARD));
        }
        crate::geometry::check_dim(center.dim())?;
        if center.dim() != self.dim {
            return Err(Error::param("query centre has the wrong dimension"));
        }
        let d = self.dim;
        let lo: Vec<f64> = (0..d).map(|i| center[i] - radius).collect();
        let hi: Vec<f64> = (0..d).map(|i| center[i] + radius).collect();
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.for_each_in_box(&lo, &hi, |_, _| true, |p| {
            if (p.position - *center).norm_sq() < r2 {
                out.push(p);
            }
        });
        out.sort_by(|a, b| a.position.lex_cmp(&b.position));
        Ok(out)
    }

    /// Chunk length used by the tube march.
    fn chunk_len(&self) -> f64 {
        match self.family {
            Family::Poisson(_) => 1.0,
            _ => self.density.powf(-1.0 / self.dim as f64),
        }
    }

    /// Calls `f` on the scatterers met along {origin + t·dir : 0 < t ≤ horizon}
    /// in order of entry time, until `f` returns true.
    pub fn march_tube<F>(&self, origin: &Vector, dir: &Direction, rho: f64, horizon: f64, mut f: F) -> Result<()>
    where
        F: FnMut(&RayHitCandidate) -> bool,
    {
        if !(horizon > 0.0) {
            return Err(Error::param(format!("horizon {horizon} must be positive")));
        }
        if !(rho > 0.0) {
            return Err(Error::param(format!("radius {rho} must be positive")));
        }
        if origin.dim() != self.dim || dir.dim() != self.dim {
            return Err(Error::param("ray has the wrong dimension"));
        }
        let d = self.dim;
        let u = dir.vector();
        let step = self.chunk_len();
        let mut buf: Vec<RayHitCandidate> = Vec::new();
        let mut t0 = 0.0;
        while t0 < horizon {
            let t1 = (t0 + step).min(horizon);
            let a = *origin + u * t0;
            let b = *origin + u * t1;
            let lo: Vec<f64> = (0..d).map(|i| a[i].min(b[i]) - rho).collect();
            let hi: Vec<f64> = (0..d).map(|i| a[i].max(b[i]) + rho).collect();
            buf.clear();
            let keep = |clo: &[f64], chi: &[f64]| segment_hits_box(&a, &b, clo, chi, rho);
            self.for_each_in_box(&lo, &hi, keep, |p| {
                let rel = p.position - *origin;
                let tc = rel.dot(&u);
                // perpendicular offset taken directly; |rel|² − tc² cancels on long flights
                let h2 = (rel - u * tc).norm_sq();
                if h2 < rho * rho {
                    let te = tc - (rho * rho - h2).sqrt();
                    if te > t0 && te <= t1 {
                        buf.push(RayHitCandidate { center: p, flight_time: te, impact_offset: h2.sqrt() });
                    }
                }
            });
            buf.sort_by(candidate_order);
            for c in &buf {
                if f(c) {
                    return Ok(());
                }
            }
            t0 = t1;
        }
        Ok(())
    }

    /// All scatterers of radius ρ entered along the ray up to `horizon`, by entry time.
    pub fn ray_tube_query(&self, origin: &Vector, dir: &Direction, rho: f64, horizon: f64) -> Result<Vec<RayHitCandidate>> {
        let mut out = Vec::new();
        self.march_tube(origin, dir, rho, horizon, |c| {
            out.push(*c);
            false
        })?;
        Ok(out)
    }

    /// Smallest pairwise distance among the points within `region_radius` of the origin.
    pub fn min_gap(&self, region_radius: f64) -> Result<f64> {
        let pts = self.points_in_ball(&Vector::zeros(self.dim), region_radius)?;
        if pts.len() < 2 {
            return Err(Error::TooFewPoints);
        }
        let mut best = f64::INFINITY;
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                best = best.min((p.position - q.position).norm_sq());
            }
        }
        Ok(best.sqrt())
    }

    /// Number of mark bins used by histograms.
    pub fn mark_bins(&self) -> usize {
        match &self.family {
            Family::Poisson(_) => 1,
            Family::Periodic(p) => p.shifts.len(),
            Family::CutAndProject(cp) => cp.window.mark_bins(),
        }
    }

    pub fn mark_bin(&self, mark: &Mark) -> usize {
        match (mark, &self.family) {
            (Mark::Component(j), _) => j - 1,
            (Mark::Internal(y), Family::CutAndProject(cp)) => cp.window.mark_bin(y.as_slice()),
            _ => 0,
        }
    }

    /// Probability of each mark bin under the asymptotic mark distribution.
    pub fn mark_bin_measures(&self) -> Vec<f64> {
        match &self.family {
            Family::Poisson(_) => vec![1.0],
            Family::Periodic(p) => vec![1.0 / p.shifts.len() as f64; p.shifts.len()],
            Family::CutAndProject(cp) => cp.window.mark_bin_fractions(),
        }
    }
}

/// Entry-time order with a lexicographic tie-break on the centre.
pub fn candidate_order(a: &RayHitCandidate, b: &RayHitCandidate) -> Ordering {
    a.flight_time
        .total_cmp(&b.flight_time)
        .then_with(|| a.center.position.lex_cmp(&b.center.position))
}

/// Whether the segment [a, b] meets the box [lo, hi] enlarged by `pad`.
fn segment_hits_box(a: &Vector, b: &Vector, lo: &[f64], hi: &[f64], pad: f64) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..a.dim() {
        let (l, h) = (lo[i] - pad, hi[i] + pad);
        let dx = b[i] - a[i];
        if dx.abs() < 1e-300 {
            if a[i] < l || a[i] > h {
                return false;
            }
            continue;
        }
        let (mut s0, mut s1) = ((l - a[i]) / dx, (h - a[i]) / dx);
        if s0 > s1 {
            std::mem::swap(&mut s0, &mut s1);
        }
        t0 = t0.max(s0);
        t1 = t1.min(s1);
        if t0 > t1 {
            return false;
        }
    }
    true
}
