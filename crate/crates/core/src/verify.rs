//! Acceptance checks behind `lorentz verify`. Each criterion returns a
//! pass/fail flag with a one-line detail; the simulation datasets shared by
//! several criteria are computed once per process.

use std::f64::consts::{FRAC_1_PI, PI};
use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;

use crate::dynamics::{fold_trajectories, LambdaSpec, Termination, TrajectoryOutcome};
use crate::error::{Error, Result};
use crate::geometry::{angle, unit_ball_volume, Direction, Vector};
use crate::kernels::{check_time_reversal, estimate_k, estimate_kg, kg_from_k, record_pairs, Bins, KernelHistogram, KgEstimate, WLayout};
use crate::limitprocess::KernelSource;
use crate::pointsets::{build_configuration, ConfigSpec, ScattererConfiguration};
use crate::scattering::{beta_constant, deflection_angle, PotentialProfile, ScatteringMap};
use crate::stats::{chi_square, correlation, ks_defective, ks_one_sample, ks_two_sample, linear_fit};
use crate::transport::{evolve_further, evolve_states, perturbation_bound, poisson_kernel_l1_sigma, Cap, Evolved, PhaseDensity, VelocityLaw, XiLaw};

const POISSON_SEED: u64 = 0x5eed_0001;
const LATTICE_SEED: u64 = 0x5eed_0002;
const KG_SEED: u64 = 0x5eed_0003;
const TRANSPORT_SEED: u64 = 0x5eed_0004;
const N_POISSON: usize = 100_000;
const N_LATTICE: usize = 100_000;
const LATTICE_COLLISIONS: usize = 11;
const N_KG: usize = 1_000_000;
const N_TRANSPORT: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Deterministic and cheap statistical checks.
    Fast,
    Full,
}

impl Suite {
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Fast => &[3, 4, 5, 6, 10, 13, 14],
            Suite::Full => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {}: {tag} {} ({:.1} s): {}", self.id, self.name, self.seconds, self.detail)
    }
}

pub fn name(id: u8) -> &'static str {
    match id {
        1 => "Poisson mean free path",
        2 => "Poisson memorylessness",
        3 => "muffin-tin quadrature vs closed form",
        4 => "hard-wall limit of the deflection angle",
        5 => "dispersing constants (alpha, beta)",
        6 => "cross-section normalization",
        7 => "lattice free-path tail",
        8 => "time-reversal symmetry",
        9 => "k^g reconstruction and boundary value",
        10 => "quasicrystal density",
        11 => "finite-rho convergence",
        12 => "transport stationarity and semigroup",
        13 => "perturbation bound",
        14 => "thread-count determinism",
        _ => "unknown",
    }
}

/// Runs one criterion; errors count as failures.
pub fn run_criterion(id: u8, threads: usize) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => criterion_1(threads),
        2 => criterion_2(threads),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(threads),
        8 => criterion_8(threads),
        9 => criterion_9(threads),
        10 => criterion_10(),
        11 => criterion_11(threads),
        12 => criterion_12(threads),
        13 => criterion_13(threads),
        14 => criterion_14(),
        _ => Err(Error::param(format!("no criterion {id}"))),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, name: name(id), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_suite(suite: Suite, threads: usize) -> Vec<CriterionResult> {
    suite.criteria().iter().map(|&id| run_criterion(id, threads)).collect()
}

type Check = Result<(bool, String)>;

// ---- shared datasets ----

/// First (and second) collisions from uniform starts in the unit cube.
#[derive(Clone, Debug, Default)]
pub struct FirstHits {
    /// Non-trapped starts.
    pub n: usize,
    /// ξ₁ and deflection angle of separated first hits.
    pub xi1: Vec<f64>,
    pub phi1: Vec<f64>,
    /// (ξ₁, w′₁, ξ₂) of trajectories completing two separated collisions.
    pub pairs: Vec<(f64, f64, f64)>,
}

pub fn first_hits(spec: &ConfigSpec, rho: f64, n: usize, n_collisions: usize, seed: u64, threads: usize) -> Result<FirstHits> {
    let cfg = build_configuration(spec)?;
    let map = ScatteringMap::hard_sphere();
    fold_trajectories(
        &cfg,
        &map,
        rho,
        &LambdaSpec::UniformCube { side: 1.0 },
        n,
        n_collisions,
        seed,
        threads,
        FirstHits::default,
        |a, _, o| {
            if o.termination == Termination::Trapped {
                return;
            }
            a.n += 1;
            let valid = match o.termination {
                Termination::NonSeparatedScatterer => o.events.len() - 1,
                _ => o.events.len(),
            };
            if valid >= 1 {
                let e = &o.events[0];
                a.xi1.push(e.xi);
                a.phi1.push(angle(&e.v_in, &e.v_out));
            }
            if valid >= 2 {
                a.pairs.push((o.events[0].xi, o.events[0].w_exit[0], o.events[1].xi));
            }
        },
        |a, b| {
            a.n += b.n;
            a.xi1.extend(b.xi1);
            a.phi1.extend(b.phi1);
            a.pairs.extend(b.pairs);
        },
    )
}

fn cached<T: Send + Sync>(cell: &'static OnceLock<std::result::Result<T, String>>, f: impl FnOnce() -> Result<T>) -> Result<&'static T> {
    cell.get_or_init(|| f().map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::param(e.clone()))
}

fn poisson_d2(threads: usize) -> Result<&'static FirstHits> {
    static CELL: OnceLock<std::result::Result<FirstHits, String>> = OnceLock::new();
    cached(&CELL, || first_hits(&ConfigSpec::poisson(1.0, 7, 2), 0.005, N_POISSON, 2, POISSON_SEED, threads))
}

/// Z² at ρ = 0.01: coarse and fine conditional histograms plus every
/// between-collision flight.
pub struct LatticeData {
    pub coarse: KernelHistogram,
    pub fine: KernelHistogram,
    /// ξ of separated between-collision flights.
    pub xi: Vec<f64>,
    /// Between-collision legs that ended without a separated hit.
    pub defects: usize,
}

pub fn coarse_bins() -> Bins {
    Bins { xi_max: 2.0, xi_bins: 10, w_layout: WLayout::Signed { n: 10 } }
}

pub fn fine_bins() -> Bins {
    Bins { xi_max: 10.0, xi_bins: 100, w_layout: WLayout::Signed { n: 40 } }
}

fn lattice(threads: usize) -> Result<&'static LatticeData> {
    static CELL: OnceLock<std::result::Result<LatticeData, String>> = OnceLock::new();
    cached(&CELL, || {
        let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 })?;
        let map = ScatteringMap::hard_sphere();
        let empty = LatticeData {
            coarse: KernelHistogram::new_conditional(2, &coarse_bins(), cfg.mark_bin_measures())?,
            fine: KernelHistogram::new_conditional(2, &fine_bins(), cfg.mark_bin_measures())?,
            xi: Vec::new(),
            defects: 0,
        };
        fold_trajectories(
            &cfg,
            &map,
            0.01,
            &LambdaSpec::UniformCube { side: 1.0 },
            N_LATTICE,
            LATTICE_COLLISIONS,
            LATTICE_SEED,
            threads,
            || LatticeData { coarse: empty.coarse.clone(), fine: empty.fine.clone(), xi: Vec::new(), defects: 0 },
            |a, _, o| {
                record_pairs(&mut a.coarse, &cfg, &o.events, o.termination);
                record_pairs(&mut a.fine, &cfg, &o.events, o.termination);
                let (xi, defect) = between_collisions(o);
                a.xi.extend(xi);
                a.defects += defect as usize;
            },
            |a, b| {
                a.coarse.merge(&b.coarse).expect("identical bins");
                a.fine.merge(&b.fine).expect("identical bins");
                a.xi.extend(b.xi);
                a.defects += b.defects;
            },
        )
    })
}

/// ξ of the separated legs after the first collision, and whether the
/// trajectory ended in a defect after at least one valid exit.
fn between_collisions(o: &TrajectoryOutcome) -> (Vec<f64>, bool) {
    let valid = match o.termination {
        Termination::NonSeparatedScatterer => o.events.len().saturating_sub(1),
        _ => o.events.len(),
    };
    let xi = o.events.iter().take(valid).skip(1).map(|e| e.xi).collect();
    let defect = valid >= 1 && matches!(o.termination, Termination::NoHitWithinHorizon | Termination::NonSeparatedScatterer);
    (xi, defect)
}

/// Direct k^g on the fine bins, plus the ξ₁ values below 0.1.
struct DirectKg {
    est: KgEstimate,
    small: Vec<f64>,
}

fn direct_kg(threads: usize) -> Result<&'static DirectKg> {
    static CELL: OnceLock<std::result::Result<DirectKg, String>> = OnceLock::new();
    cached(&CELL, || {
        let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 })?;
        let map = ScatteringMap::hard_sphere();
        let empty = KgEstimate {
            hist: KernelHistogram::new(2, &fine_bins(), cfg.mark_bin_measures(), 1)?,
            no_hit: 0,
            non_separated: 0,
            trapped: 0,
        };
        fold_trajectories(
            &cfg,
            &map,
            0.01,
            &LambdaSpec::UniformCube { side: 1.0 },
            N_KG,
            1,
            KG_SEED,
            threads,
            || DirectKg { est: empty.clone(), small: Vec::new() },
            |a, _, o| {
                a.est.record(&cfg, o);
                if let (Termination::Completed(_), Some(e)) = (o.termination, o.events.first()) {
                    if e.xi < 0.1 {
                        a.small.push(e.xi);
                    }
                }
            },
            |a, b| {
                a.est.merge(&b.est).expect("identical bins");
                a.small.extend(b.small);
            },
        )
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn exp_cdf(mean: f64) -> impl Fn(f64) -> f64 {
    move |x| 1.0 - (-x / mean).exp()
}

/// P(φ ≤ x) for the hard-sphere deflection angle in d = 2 (w uniform on [−1, 1]).
fn hard_disc_deflection_cdf(x: f64) -> f64 {
    1.0 - (0.5 * x).cos()
}

// ---- criteria ----

fn criterion_1(threads: usize) -> Check {
    let d2 = poisson_d2(threads)?;
    let m2 = mean(&d2.xi1);
    let ks = ks_one_sample(&d2.xi1, exp_cdf(0.5));
    let d3 = first_hits(&ConfigSpec::poisson(1.0, 7, 3), 0.05, N_POISSON, 1, POISSON_SEED, threads)?;
    let m3 = mean(&d3.xi1);
    let ok2 = (m2 / 0.5 - 1.0).abs() <= 0.02 && ks <= 0.01;
    let ok3 = (m3 / FRAC_1_PI - 1.0).abs() <= 0.02;
    Ok((
        ok2 && ok3,
        format!("d=2: mean {m2:.5} (target 0.5), KS {ks:.4} (<= 0.01); d=3: mean {m3:.5} (target {FRAC_1_PI:.5})"),
    ))
}

/// Equal-width cell of w′ ∈ [−1, 1].
fn w_cell(w: f64, cells: usize) -> usize {
    (((w + 1.0) * 0.5 * cells as f64) as usize).min(cells - 1)
}

fn criterion_2(threads: usize) -> Check {
    let d = poisson_d2(threads)?;
    let n = d.pairs.len();
    let x1: Vec<f64> = d.pairs.iter().map(|p| p.0).collect();
    let x2: Vec<f64> = d.pairs.iter().map(|p| p.2).collect();
    let corr = correlation(&x1, &x2);
    let cells = 4;
    let mut by_cell = vec![Vec::new(); cells];
    for p in &d.pairs {
        by_cell[w_cell(p.1, cells)].push(p.2);
    }
    let mut spread: f64 = 0.0;
    for i in 0..cells {
        for j in i + 1..cells {
            spread = spread.max(ks_two_sample(&by_cell[i], &by_cell[j]));
        }
    }
    let bound = 4.0 / (n as f64).sqrt();
    Ok((
        corr.abs() <= bound && spread <= 0.02,
        format!("{n} pairs: |corr| {:.5} (<= {bound:.5}), conditional KS spread {spread:.4} (<= 0.02)", corr.abs()),
    ))
}

/// Closed-form deflection angle of the truncated Coulomb potential.
pub fn muffin_tin_theta(alpha: f64, w: f64) -> f64 {
    let base = 2.0 * (alpha / (1.0 + alpha) * (1.0 - w * w).sqrt() / w).atan();
    if alpha < -1.0 {
        base - 2.0 * PI
    } else {
        base
    }
}

fn criterion_3() -> Check {
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0, -2.0] {
        let p = PotentialProfile::muffin_tin(alpha)?;
        for i in 0..200 {
            let w = (i as f64 + 0.5) / 200.0;
            worst = worst.max((deflection_angle(&p, w)? - muffin_tin_theta(alpha, w)).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max |theta_quad - theta_exact| = {worst:.2e} (<= 1e-8)")))
}

fn criterion_4() -> Check {
    let p = PotentialProfile::linear_wall(1e4)?;
    let mut worst: f64 = 0.0;
    for i in 1..512 {
        let w = (1.0 - 1e-4) * i as f64 / 511.0;
        worst = worst.max((deflection_angle(&p, w)? - (PI - 2.0 * w.asin())).abs());
    }
    Ok((worst <= 1e-2, format!("sup |theta - (pi - 2 asin w)| = {worst:.2e} (<= 1e-2)")))
}

fn criterion_5() -> Check {
    let (a, b) = beta_constant();
    let g = ((((2.0 * a + 2.0) * a - 8.0) * a + 2.0) * a - 7.0) * a + 3.0;
    // printed as 0.4093... and 0.7124..., i.e. truncated
    let digits = |x: f64| (x * 1e4).floor() / 1e4;
    let ok = digits(a) == 0.4093 && digits(b) == 0.7124 && g.abs() <= 1e-10;
    Ok((ok, format!("alpha = {a:.6}, beta = {b:.6}, residual {:.1e}", g.abs())))
}

fn criterion_6() -> Check {
    let mut worst: f64 = 0.0;
    let mut maps = vec![ScatteringMap::hard_sphere()];
    for alpha in [1.0, 2.0] {
        maps.push(ScatteringMap::potential(PotentialProfile::muffin_tin(alpha)?)?);
    }
    for m in &maps {
        for d in [2, 3] {
            worst = worst.max((m.total_cross_section(d) - unit_ball_volume(d - 1)).abs());
        }
    }
    let mut rng = crate::dynamics::trajectory_rng(6, 0);
    let hs = ScatteringMap::hard_sphere();
    let constant = (0..1000).all(|_| {
        let (v, vp) = (Direction::random(&mut rng, 3), Direction::random(&mut rng, 3));
        hs.cross_section(&v, &vp) == 0.25
    });
    Ok((
        worst <= 1e-6 && constant,
        format!("max |int sigma - v_(d-1)| = {worst:.2e} (<= 1e-6); hard sphere d=3 sigma == 0.25: {constant}"),
    ))
}

/// Histogram density of the between-collision flights on log-spaced bins
/// over [lo, hi]; returns (geometric bin centres, densities). Defective legs
/// count towards the normalization.
fn tail_density(xs: &[f64], defects: usize, lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let edges: Vec<f64> = (0..=bins).map(|k| lo * (hi / lo).powf(k as f64 / bins as f64)).collect();
    let n = (xs.len() + defects) as f64;
    let mut counts = vec![0u64; bins];
    for &x in xs {
        if x >= lo && x < hi {
            counts[edges.partition_point(|&e| e <= x) - 1] += 1;
        }
    }
    let centres = edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect();
    let dens = counts.iter().zip(edges.windows(2)).map(|(&c, e)| c as f64 / (n * (e[1] - e[0]))).collect();
    (centres, dens)
}

fn criterion_7(threads: usize) -> Check {
    let data = lattice(threads)?;
    let (x, dens) = tail_density(&data.xi, data.defects, 3.0, 12.0, 12);
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ld: Vec<f64> = dens.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ld);
    let level = x.iter().zip(&dens).map(|(x, v)| v * x.powi(3)).sum::<f64>() / x.len() as f64;
    let m = mean(&data.xi);
    let ok = (slope + 3.0).abs() <= 0.3 && (level / 0.1013 - 1.0).abs() <= 0.25 && (m / 0.5 - 1.0).abs() <= 0.03;
    Ok((
        ok,
        format!(
            "{} flights: density tail exponent {slope:.3} (-3 +- 0.3), level {level:.4} (0.1013 +- 25%), mean {m:.4} (0.5 +- 3%)",
            data.xi.len()
        ),
    ))
}

fn criterion_8(threads: usize) -> Check {
    let h = &lattice(threads)?.coarse;
    let rep = check_time_reversal(h, 50)?;
    // negative control: inflate the fullest cell that has a distinct partner
    let l = h.w_layout;
    let mut target = None;
    let mut best = 0;
    for a in 0..h.w_cells() {
        for b in 0..h.w_cells() {
            if b == l.reflect(a) {
                continue;
            }
            for ix in 0..h.xi_bins() {
                let i = h.idx(a, ix, b, 0);
                if h.counts[i] > best {
                    best = h.counts[i];
                    target = Some(i);
                }
            }
        }
    }
    let mut bad = h.clone();
    let i = target.ok_or_else(|| Error::param("empty histogram"))?;
    bad.counts[i] = (bad.counts[i] as f64 * 1.5).round() as u64;
    let control = check_time_reversal(&bad, 50)?;
    Ok((
        rep.passes(4.0) && !control.passes(4.0),
        format!(
            "max Z {:.2} over {} cells (<= 4); corrupted cell gives max Z {:.2} (> 4)",
            rep.max_z, rep.compared, control.max_z
        ),
    ))
}

fn criterion_9(threads: usize) -> Check {
    let lat = lattice(threads)?;
    let direct = direct_kg(threads)?;
    let rebuilt = kg_from_k(&lat.fine.to_density(), 1.0)?.coarsen(5, 5)?;
    let measured = direct.est.hist.to_density().coarsen(5, 5)?;
    let l1 = rebuilt.l1_distance(&measured)?;
    // k^g(0⁺): intercept of the ξ₁ density on [0, 0.1]
    let n = direct.est.hist.totals[0] as f64;
    let width = 0.01;
    let mut counts = [0u64; 10];
    for &x in &direct.small {
        counts[((x / width) as usize).min(9)] += 1;
    }
    let centres: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) * width).collect();
    let dens: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let (_, k0) = linear_fit(&centres, &dens);
    let target = unit_ball_volume(1);
    Ok((
        l1 <= 0.05 && (k0 / target - 1.0).abs() <= 0.05,
        format!("L1(reconstructed, direct) = {l1:.4} (<= 0.05); k^g(0+) = {k0:.4} (target {target} +- 5%)"),
    ))
}

fn density_ratio(cfg: &ScattererConfiguration, radius: f64) -> Result<f64> {
    let count = cfg.points_in_ball(&Vector::zeros(cfg.dim()), radius)?.len() as f64;
    Ok(count / (PI * radius * radius) / cfg.density())
}

fn criterion_10() -> Check {
    let z4 = density_ratio(&build_configuration(&ConfigSpec::Z4Toy)?, 150.0)?;
    let ab = density_ratio(&build_configuration(&ConfigSpec::AmmannBeenker)?, 150.0)?;
    Ok((
        (z4 - 1.0).abs() <= 0.01 && (ab - 1.0).abs() <= 0.01,
        format!("count/(volume c_P) at R=150: Z4 toy {z4:.5}, Ammann-Beenker {ab:.5} (1 +- 1%)"),
    ))
}

/// KS distance of (ξ₁, deflection angle) to the Poisson limit law, defects at +∞.
fn limit_ks(h: &FirstHits) -> f64 {
    let ks_xi = ks_defective(&h.xi1, h.n, exp_cdf(0.5));
    let ks_phi = ks_defective(&h.phi1, h.n, hard_disc_deflection_cdf);
    ks_xi.max(ks_phi)
}

fn criterion_11(threads: usize) -> Check {
    let spec = ConfigSpec::poisson(1.0, 7, 2);
    let mut ks = Vec::new();
    for rho in [0.05, 0.02] {
        ks.push(limit_ks(&first_hits(&spec, rho, N_POISSON, 1, POISSON_SEED, threads)?));
    }
    ks.push(limit_ks(poisson_d2(threads)?));
    let monotone = ks.windows(2).all(|p| p[1] < p[0]);
    Ok((
        monotone && ks[2] <= 0.015,
        format!("KS at rho = 0.05, 0.02, 0.005: {:.4}, {:.4}, {:.4} (decreasing, last <= 0.015)", ks[0], ks[1], ks[2]),
    ))
}

fn unit_box() -> (Vec<f64>, Vec<f64>) {
    (vec![0.0, 0.0], vec![1.0, 1.0])
}

fn poisson_source(c: f64) -> Result<KernelSource> {
    KernelSource::poisson(c, 2, ScatteringMap::hard_sphere())
}

fn stationary(c: f64) -> PhaseDensity {
    let (q_lo, q_hi) = unit_box();
    PhaseDensity::PoissonStationary { c, q_lo, q_hi }
}

fn criterion_12(threads: usize) -> Check {
    let source = poisson_source(1.0)?;
    let xbar = 0.5;
    // stationarity of the (ξ, deflection) law
    let ev = evolve_states(&source, &stationary(1.0), 5.0 * xbar, N_TRANSPORT, TRANSPORT_SEED, threads)?;
    let mut counts = vec![0u64; 50];
    for e in &ev {
        let s = &e.state;
        let ix = ((10.0 * exp_cdf(xbar)(s.xi)) as usize).min(9);
        let ip = ((5.0 * hard_disc_deflection_cdf(angle(&s.v, &s.v_plus))) as usize).min(4);
        counts[ix * 5 + ip] += 1;
    }
    let (_, p) = chi_square(&counts, &[0.02; 50]);
    // semigroup
    let (q_lo, q_hi) = unit_box();
    let f0 = PhaseDensity::Separable {
        q_lo,
        q_hi,
        velocity: VelocityLaw::Cap(Cap { axis: vec![1.0, 0.0], half_angle: 0.5 }),
        xi: XiLaw::Uniform { max: 1.0 },
    };
    let half = evolve_states(&source, &f0, 0.5, N_TRANSPORT, TRANSPORT_SEED + 1, threads)?;
    let two_step = evolve_further(&source, &half, 0.5, TRANSPORT_SEED + 2, threads)?;
    let one_step = evolve_states(&source, &f0, 1.0, N_TRANSPORT, TRANSPORT_SEED + 3, threads)?;
    let ks = semigroup_ks(&two_step, &one_step);
    // survival of free flight
    let ev = evolve_states(&source, &stationary(1.0), xbar, N_TRANSPORT, TRANSPORT_SEED + 4, threads)?;
    let p0 = ev.iter().filter(|e| e.collisions == 0).count() as f64 / ev.len() as f64;
    let exact = (-1.0f64).exp();
    let sigma = (exact * (1.0 - exact) / ev.len() as f64).sqrt();
    let ok = p >= 0.01 && ks <= 0.02 && (p0 - exact).abs() <= 3.0 * sigma;
    Ok((
        ok,
        format!(
            "chi2 p = {p:.3} (>= 0.01); semigroup KS {ks:.4} (<= 0.02); P(n_t = 0) = {p0:.4} vs {exact:.4} +- {:.4}",
            3.0 * sigma
        ),
    ))
}

/// Largest two-sample KS distance over q₁, q₂, ξ, the direction of v and n_t.
fn semigroup_ks(a: &[Evolved], b: &[Evolved]) -> f64 {
    let fs: [fn(&Evolved) -> f64; 5] = [
        |e| e.state.q[0],
        |e| e.state.q[1],
        |e| e.state.xi,
        |e| e.state.v[1].atan2(e.state.v[0]),
        |e| e.collisions as f64,
    ];
    fs.iter()
        .map(|f| {
            let xa: Vec<f64> = a.iter().map(f).collect();
            let xb: Vec<f64> = b.iter().map(f).collect();
            ks_two_sample(&xa, &xb)
        })
        .fold(0.0, f64::max)
}

/// Cell of the (ξ decile, q₁ quarter) partition.
fn partition_cell(e: &Evolved, xbar: f64) -> usize {
    let ix = ((10.0 * exp_cdf(xbar)(e.state.xi)) as usize).min(9);
    let iq = ((e.state.q[0] * 4.0).floor().clamp(-1.0, 4.0) + 1.0) as usize;
    ix * 6 + iq
}

fn criterion_13(threads: usize) -> Check {
    let (c, ct) = (1.0, 1.05);
    let (s1, s2) = (poisson_source(c)?, poisson_source(ct)?);
    let f0 = stationary(c);
    let v = unit_ball_volume(1);
    let l1_kernel = poisson_kernel_l1_sigma(c, ct, 2);
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [0.25, 0.5, 1.0] {
        let a = evolve_states(&s1, &f0, t, N_TRANSPORT, TRANSPORT_SEED + 10, threads)?;
        let b = evolve_states(&s2, &f0, t, N_TRANSPORT, TRANSPORT_SEED + 10, threads)?;
        let mut ha = vec![0.0; 60];
        let mut hb = vec![0.0; 60];
        for e in &a {
            ha[partition_cell(e, 0.5)] += 1.0 / a.len() as f64;
        }
        for e in &b {
            hb[partition_cell(e, 0.5)] += 1.0 / b.len() as f64;
        }
        let l1: f64 = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum();
        let bound = perturbation_bound(f0.sigma_norm_bar(), c, ct, l1_kernel, t, v);
        ok &= l1 <= bound;
        parts.push(format!("t={t}: L1 {l1:.4} <= {bound:.4}"));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_14() -> Check {
    let mut ok = true;
    let mut details = Vec::new();
    for (label, spec) in [("Z2", ConfigSpec::Cubic { dim: 2 }), ("Poisson", ConfigSpec::poisson(1.0, 3, 2))] {
        let cfg = build_configuration(&spec)?;
        let map = ScatteringMap::hard_sphere();
        let bins = Bins::default_for(&cfg);
        let lambda = LambdaSpec::UniformCube { side: 1.0 };
        let n = 3 * crate::dynamics::BLOCK + 123;
        let mut outputs = Vec::new();
        for threads in [1, 4, 8] {
            let kg = estimate_kg(&cfg, &map, 0.01, n, &bins, &lambda, 14, threads)?;
            let k = estimate_k(&cfg, &map, 0.01, n / 4, 4, &bins, &lambda, 14, threads)?;
            outputs.push((serde_json::to_string_pretty(&kg)?, serde_json::to_string_pretty(&k)?));
        }
        let same = outputs.windows(2).all(|p| p[0] == p[1]);
        ok &= same;
        details.push(format!("{label}: {}", if same { "identical" } else { "differ" }));
    }
    Ok((ok, format!("histogram JSON across 1/4/8 threads: {}", details.join(", "))))
}
