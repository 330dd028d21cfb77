//! Evolution of extended-phase-space densities under the semigroup K_t:
//! Monte Carlo along the Markov process Θ̂, quadrature of the first two
//! collision-series terms, and the L¹ perturbation bound.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dynamics::{parallel_map, trajectory_rng};
use crate::error::{Error, Result};
use crate::geometry::{angle, random_in_ball, rotation_to_e1, unit_ball_volume, unit_sphere_area, Direction, Vector};
use crate::kernels::PoissonKernel;
use crate::limitprocess::{ExtendedState, KernelSource};
use crate::scattering::ScatteringMap;

/// Spherical cap {v : angle(v, axis) ≤ half_angle}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cap {
    pub axis: Vec<f64>,
    pub half_angle: f64,
}

impl Cap {
    pub fn contains(&self, v: &Direction) -> bool {
        let a = Direction::from_unit(Vector::new(&self.axis));
        angle(v, &a) <= self.half_angle
    }

    /// Normalized surface measure of the cap.
    pub fn area(&self) -> f64 {
        match self.axis.len() {
            2 => 2.0 * self.half_angle.min(PI),
            _ => 2.0 * PI * (1.0 - self.half_angle.min(PI).cos()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Direction {
        let a = self.half_angle.min(PI);
        let local = if self.axis.len() == 2 {
            let t = rng.random_range(-a..=a);
            Vector::new(&[t.cos(), t.sin()])
        } else {
            let c = rng.random_range(a.cos()..=1.0);
            let s = (1.0 - c * c).max(0.0).sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            Vector::new(&[c, s * phi.cos(), s * phi.sin()])
        };
        let axis = Direction::from_unit(Vector::new(&self.axis));
        Direction::from_unit(local.rotate(&rotation_to_e1(&axis).transpose()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityLaw {
    Uniform,
    Cap(Cap),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiLaw {
    Exponential { mean: f64 },
    Uniform { max: f64 },
}

impl XiLaw {
    fn pdf(&self, xi: f64) -> f64 {
        match *self {
            XiLaw::Exponential { mean } => {
                if xi < 0.0 {
                    0.0
                } else {
                    (-xi / mean).exp() / mean
                }
            }
            XiLaw::Uniform { max } => {
                if (0.0..max).contains(&xi) {
                    1.0 / max
                } else {
                    0.0
                }
            }
        }
    }

    fn sup(&self) -> f64 {
        match *self {
            XiLaw::Exponential { mean } => 1.0 / mean,
            XiLaw::Uniform { max } => 1.0 / max,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            XiLaw::Exponential { mean } => Exp::new(1.0 / mean).expect("positive mean").sample(rng),
            XiLaw::Uniform { max } => max * (1.0 - rng.random::<f64>()),
        }
    }
}

/// Initial densities on the extended phase space with trivial marks. Both
/// are uniform in q over a box; v₊ given v follows σ(v, ·)/v_{d−1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseDensity {
    /// vol⁻¹ ω⁻¹ c σ(v, v₊) e^{−ξ/ξ̄}, stationary for the Poisson kernel with intensity c.
    PoissonStationary { c: f64, q_lo: Vec<f64>, q_hi: Vec<f64> },
    /// vol⁻¹ g(v) h(ξ) σ(v, v₊)/v_{d−1}.
    Separable { q_lo: Vec<f64>, q_hi: Vec<f64>, velocity: VelocityLaw, xi: XiLaw },
}

impl PhaseDensity {
    fn q_box(&self) -> (&[f64], &[f64]) {
        match self {
            PhaseDensity::PoissonStationary { q_lo, q_hi, .. } | PhaseDensity::Separable { q_lo, q_hi, .. } => (q_lo, q_hi),
        }
    }

    pub fn dim(&self) -> usize {
        self.q_box().0.len()
    }

    fn q_volume(&self) -> f64 {
        let (lo, hi) = self.q_box();
        lo.iter().zip(hi).map(|(a, b)| b - a).product()
    }

    /// Rejects boxes of zero volume and nonsensical parameters.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.q_box();
        let d = lo.len();
        crate::geometry::check_dim(d)?;
        if hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::param("f0 is not normalizable: q box has no interior"));
        }
        match self {
            PhaseDensity::PoissonStationary { c, .. } if !(*c > 0.0) => Err(Error::param("stationary density needs c > 0")),
            PhaseDensity::Separable { velocity, xi, .. } => {
                if let VelocityLaw::Cap(cap) = velocity {
                    if cap.axis.len() != d || !(cap.half_angle > 0.0) {
                        return Err(Error::param("velocity cap needs a d-dimensional axis and positive angle"));
                    }
                }
                match *xi {
                    XiLaw::Exponential { mean } if mean > 0.0 => Ok(()),
                    XiLaw::Uniform { max } if max > 0.0 => Ok(()),
                    _ => Err(Error::param("ξ law needs a positive scale")),
                }
            }
            _ => Ok(()),
        }
    }

    fn velocity_pdf(&self, v: &Direction) -> f64 {
        let d = self.dim();
        match self {
            PhaseDensity::PoissonStationary { .. } | PhaseDensity::Separable { velocity: VelocityLaw::Uniform, .. } => {
                1.0 / unit_sphere_area(d)
            }
            PhaseDensity::Separable { velocity: VelocityLaw::Cap(cap), .. } => {
                if cap.contains(v) {
                    1.0 / cap.area()
                } else {
                    0.0
                }
            }
        }
    }

    fn xi_law(&self) -> XiLaw {
        match self {
            PhaseDensity::PoissonStationary { c, .. } => XiLaw::Exponential { mean: crate::dynamics::mean_free_path(self.dim(), *c) },
            PhaseDensity::Separable { xi, .. } => *xi,
        }
    }

    /// f(q, v, ξ, ς, v₊).
    pub fn eval(&self, map: &ScatteringMap, s: &ExtendedState) -> f64 {
        let (lo, hi) = self.q_box();
        if s.mark_bin != 0 || (0..self.dim()).any(|i| s.q[i] < lo[i] || s.q[i] > hi[i]) {
            return 0.0;
        }
        let d = self.dim();
        let sigma = map.cross_section(&s.v, &s.v_plus);
        self.velocity_pdf(&s.v) * self.xi_law().pdf(s.xi) * sigma / unit_ball_volume(d - 1) / self.q_volume()
    }

    /// ‖f̄‖_σ with f̄ = ∫ f dq.
    pub fn sigma_norm_bar(&self) -> f64 {
        let d = self.dim();
        let sup_v = match self {
            PhaseDensity::Separable { velocity: VelocityLaw::Cap(cap), .. } => 1.0 / cap.area(),
            _ => 1.0 / unit_sphere_area(d),
        };
        sup_v * self.xi_law().sup() / unit_ball_volume(d - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, map: &ScatteringMap, rng: &mut R) -> Result<ExtendedState> {
        let (lo, hi) = self.q_box();
        let d = self.dim();
        let mut q = Vector::zeros(d);
        for i in 0..d {
            q.as_mut_slice()[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
        }
        let v = match self {
            PhaseDensity::Separable { velocity: VelocityLaw::Cap(cap), .. } => cap.sample(rng),
            _ => Direction::random(rng, d),
        };
        let xi = self.xi_law().sample(rng);
        let w = random_in_ball(rng, d - 1);
        let v_plus = map.exit_data(&v, &w)?.v_plus;
        Ok(ExtendedState { q, v, xi, mark_bin: 0, v_plus })
    }
}

/// Indicator of an axis-aligned box in (q, ξ) times caps in v and v₊,
/// optionally restricted to paths with exactly `collisions` collisions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    #[serde(default)]
    pub q_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub q_hi: Option<Vec<f64>>,
    #[serde(default)]
    pub xi: Option<(f64, f64)>,
    #[serde(default)]
    pub v_cap: Option<Cap>,
    #[serde(default)]
    pub v_plus_cap: Option<Cap>,
    #[serde(default)]
    pub collisions: Option<usize>,
}

impl TestSet {
    pub fn contains(&self, s: &ExtendedState, n_t: usize) -> bool {
        if self.collisions.is_some_and(|n| n != n_t) {
            return false;
        }
        if let Some(lo) = &self.q_lo {
            if lo.iter().enumerate().any(|(i, &a)| s.q[i] < a) {
                return false;
            }
        }
        if let Some(hi) = &self.q_hi {
            if hi.iter().enumerate().any(|(i, &b)| s.q[i] > b) {
                return false;
            }
        }
        if let Some((a, b)) = self.xi {
            if s.xi < a || s.xi >= b {
                return false;
            }
        }
        self.v_cap.as_ref().is_none_or(|c| c.contains(&s.v)) && self.v_plus_cap.as_ref().is_none_or(|c| c.contains(&s.v_plus))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Collision-series terms n = 0..n_terms_used − 1 seen in the sample.
    pub n_terms_used: usize,
    /// Σ_{n ≥ n_terms_used} (c_𝒫 v_{d−1} t)^{n−1}/(n−1)!, the L¹ mass bound of unseen terms.
    pub truncation_bound: f64,
}

/// Θ̂(t) together with the number of collisions in (0, t].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evolved {
    pub state: ExtendedState,
    pub collisions: usize,
}

/// Runs the Markov process from `s` for time `t`.
pub fn propagate<R: Rng + ?Sized>(source: &KernelSource, s: &ExtendedState, t: f64, rng: &mut R) -> Result<Evolved> {
    if !(t >= 0.0) {
        return Err(Error::param(format!("time {t} must be non-negative")));
    }
    if s.xi > t {
        let state = ExtendedState { q: s.q + s.v.vector() * t, xi: s.xi - t, ..*s };
        return Ok(Evolved { state, collisions: 0 });
    }
    let mut step = source.pending_step(s)?;
    let mut elapsed = s.xi;
    let mut q = s.q + s.v.vector() * s.xi;
    let mut v = s.v_plus;
    let mut n = 1;
    loop {
        let (next, _) = source.sample_next(&step, rng)?;
        if elapsed + next.xi > t {
            let state = ExtendedState {
                q: q + v.vector() * (t - elapsed),
                v,
                xi: elapsed + next.xi - t,
                mark_bin: next.mark_bin,
                v_plus: next.v,
            };
            return Ok(Evolved { state, collisions: n });
        }
        elapsed += next.xi;
        q = q + v.vector() * next.xi;
        v = next.v;
        step = next;
        n += 1;
    }
}

/// Samples Θ̂(t) for `n` initial states drawn from f0, one stream per index.
pub fn evolve_states(
    source: &KernelSource,
    f0: &PhaseDensity,
    t: f64,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<Evolved>> {
    f0.validate()?;
    if f0.dim() != source.dim() {
        return Err(Error::param("f0 and kernel dimensions differ"));
    }
    parallel_map(n, seed, threads, |i, _| {
        let mut rng = trajectory_rng(seed, i as u64);
        let s0 = f0.sample(source.map(), &mut rng)?;
        propagate(source, &s0, t, &mut rng)
    })?
    .into_iter()
    .collect()
}

/// Continues already evolved states for a further time `s` (fresh streams from `seed`).
pub fn evolve_further(source: &KernelSource, states: &[Evolved], s: f64, seed: u64, threads: usize) -> Result<Vec<Evolved>> {
    parallel_map(states.len(), seed, threads, |i, _| {
        let mut rng = trajectory_rng(seed, i as u64);
        let e = propagate(source, &states[i].state, s, &mut rng)?;
        Ok(Evolved { state: e.state, collisions: states[i].collisions + e.collisions })
    })?
    .into_iter()
    .collect()
}

/// Σ_{n ≥ from} (rate·t)^{n−1}/(n−1)!, with from ≥ 1.
pub fn series_tail(rate_t: f64, from: usize) -> f64 {
    let from = from.max(1);
    let mut term = 1.0;
    for k in 1..from {
        term *= rate_t / k as f64;
    }
    let mut sum = 0.0;
    let mut k = from;
    while term > 1e-300 && (term > 1e-17 * sum || k < from + 3) {
        sum += term;
        term *= rate_t / k as f64;
        k += 1;
    }
    sum
}

/// Summarizes evolved samples over the test sets.
pub fn estimate_sets(source: &KernelSource, evolved: &[Evolved], t: f64, sets: &[TestSet]) -> Vec<ObservableEstimate> {
    let n = evolved.len().max(1) as f64;
    let max_n = evolved.iter().map(|e| e.collisions).max().unwrap_or(0);
    let truncation_bound = series_tail(source.collision_rate() * t, max_n + 1);
    sets.iter()
        .map(|set| {
            let hits = evolved.iter().filter(|e| set.contains(&e.state, e.collisions)).count() as f64;
            let p = hits / n;
            ObservableEstimate {
                value: p,
                std_error: (p * (1.0 - p) / n).sqrt(),
                n_terms_used: max_n + 1,
                truncation_bound,
            }
        })
        .collect()
}

/// ∫_A K_t f0 for each test set A.
#[allow(clippy::too_many_arguments)]
pub fn evolve_mc(
    source: &KernelSource,
    f0: &PhaseDensity,
    t: f64,
    sets: &[TestSet],
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ObservableEstimate>> {
    let ev = evolve_states(source, f0, t, n, seed, threads)?;
    Ok(estimate_sets(source, &ev, t, sets))
}

/// CSV with columns set_id, t, estimate, std_error, truncation_bound.
pub fn write_estimates_csv<W: Write>(rows: &[(usize, f64, ObservableEstimate)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["set_id", "t", "estimate", "std_error", "truncation_bound"])?;
    for (id, t, e) in rows {
        w.write_record([id.to_string(), t.to_string(), e.value.to_string(), e.std_error.to_string(), e.truncation_bound.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Integral of g over S^{d−1} (d = 2: 4 × 64-node panels in the angle;
/// d = 3: 64 nodes in cos θ times 4 × 64 in the azimuth).
fn sphere_integral<F: FnMut(&Direction) -> f64>(d: usize, mut g: F) -> f64 {
    let rule = crate::quadrature::rule(64);
    let panels = 4;
    let h = 2.0 * PI / panels as f64;
    let around = |g: &mut F, c: f64, s: f64| -> f64 {
        (0..panels)
            .map(|k| {
                rule.integrate(k as f64 * h, (k + 1) as f64 * h, |phi| {
                    let v = if d == 2 {
                        Vector::new(&[phi.cos(), phi.sin()])
                    } else {
                        Vector::new(&[c, s * phi.cos(), s * phi.sin()])
                    };
                    g(&Direction::from_unit(v))
                })
            })
            .sum()
    };
    if d == 2 {
        around(&mut g, 0.0, 0.0)
    } else {
        rule.integrate(-1.0, 1.0, |c| around(&mut g, c, (1.0 - c * c).max(0.0).sqrt()))
    }
}

/// n-th collision-series term K_t^{(n)} f0 at a probe point, Poisson kernel, n ∈ {0, 1}.
pub fn collision_term_quadrature(
    kernel: &PoissonKernel,
    map: &ScatteringMap,
    f0: &PhaseDensity,
    t: f64,
    n: usize,
    probe: &ExtendedState,
) -> Result<f64> {
    match n {
        0 => Ok(f0.eval(map, &ExtendedState { q: probe.q - probe.v.vector() * t, xi: probe.xi + t, ..*probe })),
        1 => {
            let d = kernel.dim;
            // ∫_0^t dξ₁ ∫ dv₀ f0(q − ξ₁v₀ − (t − ξ₁)v, v₀, ξ₁, ·, v) p₀(v₀, v; ξ + t − ξ₁, v₊)
            let p_tail = |xi1: f64| kernel.p(map, &probe.v, probe.xi + t - xi1, &probe.v_plus);
            let inner = |xi1: f64| {
                let pt = p_tail(xi1);
                if pt == 0.0 {
                    return 0.0;
                }
                pt * sphere_integral(d, |v0| {
                    let q = probe.q - v0.vector() * xi1 - probe.v.vector() * (t - xi1);
                    f0.eval(map, &ExtendedState { q, v: *v0, xi: xi1, mark_bin: 0, v_plus: probe.v })
                })
            };
            crate::quadrature::adaptive(inner, 0.0, t, 1e-10, 1e-7)
        }
        _ => Err(Error::param(format!("quadrature covers n ≤ 1, got {n}"))),
    }
}

/// 2‖f̄‖_σ ‖p₀ − p̃₀‖_{L¹_σ} t exp(v_{d−1}(‖p₀‖_σ + ‖p̃₀‖_σ)t).
pub fn perturbation_bound(f0_norm_sigma: f64, p_norm_sigma: f64, p_tilde_norm_sigma: f64, l1_kernel_dist: f64, t: f64, v_dm1: f64) -> f64 {
    2.0 * f0_norm_sigma * l1_kernel_dist * t * (v_dm1 * (p_norm_sigma + p_tilde_norm_sigma) * t).exp()
}

/// ‖p₀ − p̃₀‖_{L¹_σ(Y)} for Poisson kernels with intensities c₁, c₂:
/// v_{d−1} ω(S^{d−1}) ∫ |λ₁e^{−λ₁ξ} − λ₂e^{−λ₂ξ}| dξ with λ_i = c_i v_{d−1}.
pub fn poisson_kernel_l1_sigma(c1: f64, c2: f64, dim: usize) -> f64 {
    let v = unit_ball_volume(dim - 1);
    let (l1, l2) = (c1 * v, c2 * v);
    let exp_l1 = if l1 == l2 {
        0.0
    } else {
        let x = (l1 / l2).ln() / (l1 - l2);
        2.0 * ((-l1 * x).exp() - (-l2 * x).exp()).abs()
    };
    v * unit_sphere_area(dim) * exp_l1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_bound_examples() {
        assert_eq!(perturbation_bound(1.0, 2.0, 2.0, 0.0, 1.0, 2.0), 0.0);
        let b = perturbation_bound(1.0, 2.0, 2.0, 0.1, 1.0, 2.0);
        assert!((b - 0.2 * 8f64.exp()).abs() < 1e-9);
        assert!((b - 596.0).abs() < 0.2);
    }

    #[test]
    fn series_tail_sums_exponential() {
        assert!((series_tail(1.3, 1) - 1.3f64.exp()).abs() < 1e-14);
        assert!((series_tail(1.3, 2) - (1.3f64.exp() - 1.0)).abs() < 1e-14);
        assert!(series_tail(0.5, 30) < 1e-30);
    }

    #[test]
    fn exp_l1_against_quadrature() {
        let (c1, c2) = (1.0, 1.05);
        let v = 2.0;
        let q = crate::quadrature::adaptive(
            |x| (c1 * v * (-c1 * v * x).exp() - c2 * v * (-c2 * v * x).exp()).abs(),
            0.0,
            60.0,
            1e-13,
            1e-12,
        )
        .unwrap();
        let got = poisson_kernel_l1_sigma(c1, c2, 2) / (v * unit_sphere_area(2));
        assert!((got - q).abs() < 1e-9, "{got} {q}");
    }

    #[test]
    fn sphere_integral_areas() {
        assert!((sphere_integral(2, |_| 1.0) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_integral(3, |_| 1.0) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_integral(3, |v| v[2] * v[2]) - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cap_area_and_sampling() {
        let cap = Cap { axis: vec![0.0, 0.0, 1.0], half_angle: 0.7 };
        let mut rng = crate::dynamics::trajectory_rng(1, 0);
        for _ in 0..100 {
            assert!(cap.contains(&cap.sample(&mut rng)));
        }
        let in_cap = sphere_integral(3, |v| if cap.contains(v) { 1.0 } else { 0.0 });
        assert!((in_cap - cap.area()).abs() / cap.area() < 0.05);
    }

    #[test]
    fn zero_volume_box_rejected() {
        let f = PhaseDensity::PoissonStationary { c: 1.0, q_lo: vec![0.0, 0.0], q_hi: vec![0.0, 1.0] };
        assert!(f.validate().is_err());
    }
}
