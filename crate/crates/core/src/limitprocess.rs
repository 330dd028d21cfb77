//! The limiting random flight process Θ(t) and its Markovian extension Θ̂(t),
//! sampled from the closed-form Poisson kernels or from kernel histograms.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{random_in_ball, Direction, Vector};
use crate::kernels::{KernelHistogram, PoissonKernel};
use crate::scattering::ScatteringMap;

/// One collision of the chain: flight time ξ_j, mark bin ς_j of the scatterer
/// hit, and the velocity v_j after it. The impact and exit parameters are kept
/// because the next step of an empirical chain conditions on w′.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainStep {
    pub xi: f64,
    pub mark_bin: usize,
    pub v: Direction,
    pub w: Vector,
    pub w_exit: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlightPath {
    pub q0: Vector,
    pub v0: Direction,
    pub steps: Vec<ChainStep>,
    /// T_n = ξ₁ + … + ξ_n.
    pub times: Vec<f64>,
    /// Some step fell back to the ω′-marginal kernel.
    pub fallback_used: bool,
}

/// Θ̂(t) = (q, v, ξ, ς, v₊).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtendedState {
    pub q: Vector,
    pub v: Direction,
    pub xi: f64,
    pub mark_bin: usize,
    pub v_plus: Direction,
}

/// Cumulative counts over the cells of one histogram condition.
#[derive(Clone, Debug)]
struct CellSampler {
    cumulative: Vec<u64>,
}

impl CellSampler {
    fn new(counts: &[u64]) -> Option<Self> {
        let mut acc = 0u64;
        let cumulative: Vec<u64> = counts
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect();
        (acc > 0).then_some(CellSampler { cumulative })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random_range(0..total);
        self.cumulative.partition_point(|&c| c <= u)
    }
}

/// Histogram-backed kernels: k^g for the first step, k conditioned on the
/// previous (w′ cell, mark bin) afterwards. Mass at or beyond Ξ_max and
/// defects are not sampled, so every drawn ξ is finite.
#[derive(Clone, Debug)]
pub struct EmpiricalKernels {
    pub kg: KernelHistogram,
    pub k: KernelHistogram,
    pub map: ScatteringMap,
    /// c_𝒫 of the configuration the histograms came from.
    pub density: f64,
    first: CellSampler,
    conditional: Vec<Option<CellSampler>>,
    marginal: CellSampler,
}

impl EmpiricalKernels {
    pub fn new(kg: KernelHistogram, k: KernelHistogram, map: ScatteringMap, density: f64) -> Result<Self> {
        if kg.conditions != 1 || k.conditions != k.w_cells() * k.mark_bins {
            return Err(Error::BinMismatch("need a k^g histogram and a conditional k histogram".into()));
        }
        if kg.dim != k.dim || kg.mark_bins != k.mark_bins {
            return Err(Error::BinMismatch("k^g and k disagree on dimension or marks".into()));
        }
        let first = CellSampler::new(kg.cell_counts(0)).ok_or_else(|| Error::param("k^g histogram is empty"))?;
        let conditional = (0..k.conditions).map(|c| CellSampler::new(k.cell_counts(c))).collect();
        let marginal = CellSampler::new(k.marginalize_conditions().cell_counts(0))
            .ok_or_else(|| Error::param("k histogram is empty"))?;
        Ok(EmpiricalKernels { kg, k, map, density, first, conditional, marginal })
    }

    /// (ξ, w, mark bin) uniformly within the chosen cell.
    fn draw<R: Rng + ?Sized>(h: &KernelHistogram, cell: usize, rng: &mut R) -> (f64, Vector, usize) {
        let per_xi = h.w_cells() * h.mark_bins;
        let ix = cell / per_xi;
        let iw = (cell % per_xi) / h.mark_bins;
        let im = cell % h.mark_bins;
        let lo = h.xi_edges[ix];
        let xi = lo + (h.xi_edges[ix + 1] - lo) * (1.0 - rng.random::<f64>());
        (xi, h.w_layout.sample_in_cell(iw, rng), im)
    }
}

#[derive(Clone, Debug)]
pub enum KernelSource {
    PoissonAnalytic { kernel: PoissonKernel, map: ScatteringMap },
    Empirical(Box<EmpiricalKernels>),
}

impl KernelSource {
    pub fn poisson(c: f64, dim: usize, map: ScatteringMap) -> Result<Self> {
        Ok(KernelSource::PoissonAnalytic { kernel: PoissonKernel::new(c, dim)?, map })
    }

    pub fn empirical(kg: KernelHistogram, k: KernelHistogram, map: ScatteringMap, density: f64) -> Result<Self> {
        Ok(KernelSource::Empirical(Box::new(EmpiricalKernels::new(kg, k, map, density)?)))
    }

    /// c_𝒫 v_{d−1}, the rate in the collision-series bound.
    pub fn collision_rate(&self) -> f64 {
        let c = match self {
            KernelSource::PoissonAnalytic { kernel, .. } => kernel.c,
            KernelSource::Empirical(e) => e.density,
        };
        c * crate::geometry::unit_ball_volume(self.dim() - 1)
    }

    pub fn map(&self) -> &ScatteringMap {
        match self {
            KernelSource::PoissonAnalytic { map, .. } => map,
            KernelSource::Empirical(e) => &e.map,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelSource::PoissonAnalytic { kernel, .. } => kernel.dim,
            KernelSource::Empirical(e) => e.kg.dim,
        }
    }

    fn step(&self, v: &Direction, xi: f64, w: Vector, mark_bin: usize) -> Result<ChainStep> {
        let ex = self.map().exit_data(v, &w)?;
        Ok(ChainStep { xi, mark_bin, v: ex.v_plus, w, w_exit: ex.w_exit })
    }

    fn poisson_draw<R: Rng + ?Sized>(kernel: &PoissonKernel, rng: &mut R) -> (f64, Vector) {
        let exp = Exp::new(1.0 / kernel.mean_free_path()).expect("positive rate");
        let mut xi = exp.sample(rng);
        while xi <= 0.0 {
            xi = exp.sample(rng);
        }
        (xi, random_in_ball(rng, kernel.dim - 1))
    }

    /// (ξ₁, ς₁, v₁) ~ p(v₀; ·).
    pub fn sample_first<R: Rng + ?Sized>(&self, v0: &Direction, rng: &mut R) -> Result<ChainStep> {
        match self {
            KernelSource::PoissonAnalytic { kernel, .. } => {
                let (xi, w) = Self::poisson_draw(kernel, rng);
                self.step(v0, xi, w, 0)
            }
            KernelSource::Empirical(e) => {
                let cell = e.first.sample(rng);
                let (xi, w, m) = EmpiricalKernels::draw(&e.kg, cell, rng);
                self.step(v0, xi, w, m)
            }
        }
    }

    /// Next step after `prev` (velocity prev.v, exit parameter prev.w_exit);
    /// the flag reports a fallback to the marginal kernel.
    pub fn sample_next<R: Rng + ?Sized>(&self, prev: &ChainStep, rng: &mut R) -> Result<(ChainStep, bool)> {
        match self {
            KernelSource::PoissonAnalytic { kernel, .. } => {
                let (xi, w) = Self::poisson_draw(kernel, rng);
                Ok((self.step(&prev.v, xi, w, 0)?, false))
            }
            KernelSource::Empirical(e) => {
                let cond = e.k.condition_of(&prev.w_exit, prev.mark_bin);
                let (sampler, fallback) = match &e.conditional[cond] {
                    Some(s) => (s, false),
                    None => (&e.marginal, true),
                };
                let cell = sampler.sample(rng);
                let (xi, w, m) = EmpiricalKernels::draw(&e.k, cell, rng);
                Ok((self.step(&prev.v, xi, w, m)?, fallback))
            }
        }
    }

    /// The pending collision of an extended state as a chain step, so that
    /// `sample_next` can continue from it.
    pub fn pending_step(&self, state: &ExtendedState) -> Result<ChainStep> {
        let w = self.map().impact_for_exit(&state.v, &state.v_plus)?;
        let w = if w.norm() >= 1.0 { w * ((1.0 - 1e-12) / w.norm()) } else { w };
        let ex = self.map().exit_data(&state.v, &w)?;
        Ok(ChainStep { xi: state.xi, mark_bin: state.mark_bin, v: state.v_plus, w, w_exit: ex.w_exit })
    }
}

/// Starting point of a chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChainInit {
    Fixed { q0: Vector, v0: Direction },
    /// v₀ uniform on the sphere.
    RandomVelocity { q0: Vector },
}

pub fn sample_chain<R: Rng + ?Sized>(source: &KernelSource, init: &ChainInit, n_steps: usize, rng: &mut R) -> Result<FlightPath> {
    let (q0, v0) = match init {
        ChainInit::Fixed { q0, v0 } => (*q0, *v0),
        ChainInit::RandomVelocity { q0 } => (*q0, Direction::random(rng, source.dim())),
    };
    if q0.dim() != source.dim() || v0.dim() != source.dim() {
        return Err(Error::param("initial condition has the wrong dimension"));
    }
    let mut path = FlightPath { q0, v0, steps: Vec::with_capacity(n_steps), times: Vec::with_capacity(n_steps), fallback_used: false };
    if n_steps == 0 {
        return Ok(path);
    }
    let mut step = source.sample_first(&v0, rng)?;
    let mut t = step.xi;
    path.steps.push(step);
    path.times.push(t);
    while path.steps.len() < n_steps {
        let (next, fb) = source.sample_next(&step, rng)?;
        path.fallback_used |= fb;
        step = next;
        t += step.xi;
        path.steps.push(step);
        path.times.push(t);
    }
    Ok(path)
}

/// Continues the chain from Θ̂ = `state`: the first step is the pending
/// collision, later steps are sampled.
pub fn continue_chain<R: Rng + ?Sized>(source: &KernelSource, state: &ExtendedState, n_steps: usize, rng: &mut R) -> Result<FlightPath> {
    let mut path = FlightPath {
        q0: state.q,
        v0: state.v,
        steps: Vec::with_capacity(n_steps),
        times: Vec::with_capacity(n_steps),
        fallback_used: false,
    };
    if n_steps == 0 {
        return Ok(path);
    }
    let mut step = source.pending_step(state)?;
    let mut t = step.xi;
    path.steps.push(step);
    path.times.push(t);
    while path.steps.len() < n_steps {
        let (next, fb) = source.sample_next(&step, rng)?;
        path.fallback_used |= fb;
        step = next;
        t += step.xi;
        path.steps.push(step);
        path.times.push(t);
    }
    Ok(path)
}

impl FlightPath {
    /// Number of collisions n_t with T_n ≤ t.
    pub fn collisions_by(&self, t: f64) -> usize {
        self.times.partition_point(|&tn| tn <= t)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::param(format!("time {t} must be non-negative")));
        }
        if let Some(&last) = self.times.last() {
            if t >= last {
                return Err(Error::BeyondHorizon(t, last));
            }
        }
        Ok(())
    }

    fn velocity_after(&self, n: usize) -> Direction {
        if n == 0 {
            self.v0
        } else {
            self.steps[n - 1].v
        }
    }

    /// Θ(t) = (q₀ + Σ_{j≤n_t} ξ_j v_{j−1} + (t − T_{n_t}) v_{n_t}, v_{n_t}).
    /// A path without steps is a free flight for all t ≥ 0.
    pub fn theta(&self, t: f64) -> Result<(Vector, Direction)> {
        self.check_time(t)?;
        let n = self.collisions_by(t);
        let mut q = self.q0;
        for j in 0..n {
            q = q + self.velocity_after(j).vector() * self.steps[j].xi;
        }
        let tn = if n == 0 { 0.0 } else { self.times[n - 1] };
        let v = self.velocity_after(n);
        Ok((q + v.vector() * (t - tn), v))
    }

    /// Θ̂(t); needs a pending collision, so t < T_n with n ≥ 1.
    pub fn theta_hat(&self, t: f64) -> Result<ExtendedState> {
        if self.steps.is_empty() {
            return Err(Error::BeyondHorizon(t, 0.0));
        }
        let (q, v) = self.theta(t)?;
        let n = self.collisions_by(t);
        let next = &self.steps[n];
        Ok(ExtendedState { q, v, xi: self.times[n] - t, mark_bin: next.mark_bin, v_plus: next.v })
    }

    /// CSV rows (t, q…, v…) on the given time grid; times past the horizon are skipped.
    pub fn write_csv<W: Write>(&self, times: &[f64], out: W) -> Result<()> {
        let d = self.q0.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("q{i}")));
        header.extend((0..d).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for &t in times {
            let Ok((q, v)) = self.theta(t) else { continue };
            let mut row = vec![t.to_string()];
            row.extend(q.as_slice().iter().map(|x| x.to_string()));
            row.extend(v.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn evaluate_theta(path: &FlightPath, t: f64) -> Result<(Vector, Direction)> {
    path.theta(t)
}

pub fn evaluate_theta_hat(path: &FlightPath, t: f64) -> Result<ExtendedState> {
    path.theta_hat(t)
}
