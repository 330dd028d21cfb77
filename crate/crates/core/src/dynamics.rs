//! Finite-ρ Lorentz-gas trajectories: straight flights at unit speed between
//! scatterers of radius ρ, collisions applied through the scattering map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{perp, rotation_to_e1, unit_ball_volume, Direction, ScaleParams, Vector};
use crate::pointsets::{MarkedPoint, ScattererConfiguration};
use crate::scattering::ScatteringMap;

/// Hits with |w| above this are treated as tangential and passed through.
pub const GRAZING: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionEvent {
    /// Microscopic flight time since the previous exit (plus ρT(w) for potentials).
    pub tau: f64,
    /// ρ^{d−1} τ.
    pub xi: f64,
    pub center: MarkedPoint,
    /// Normalized impact parameter (u₁ R(v_in))_⊥.
    pub w: Vector,
    pub w_exit: Vector,
    pub v_in: Direction,
    pub v_out: Direction,
    /// Entry point on the unit sphere around the centre.
    pub entry: Direction,
    /// Exit point on the unit sphere around the centre.
    pub exit: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed(usize),
    NoHitWithinHorizon,
    Trapped,
    NonSeparatedScatterer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOutcome {
    pub events: Vec<CollisionEvent>,
    pub termination: Termination,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition {
    /// Position in macroscopic units.
    Macroscopic { q: Vector, v: Direction },
    /// Leaving the scatterer at `center` with exit parameter w′ and velocity v.
    FromScattererExit {
        center: MarkedPoint,
        w_exit: Vector,
        v: Direction,
    },
}

/// Result of one leg.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Leg {
    Hit(CollisionEvent),
    NoHit,
    /// The first scatterer hit has a neighbour within 2ρ.
    NonSeparated(CollisionEvent),
}

/// Distribution Λ of macroscopic initial conditions; velocities are uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSpec {
    UniformCube { side: f64 },
    PointMass { q: Vec<f64> },
}

pub fn sample_macroscopic_initial<R: Rng + ?Sized>(rng: &mut R, lambda: &LambdaSpec, dim: usize) -> InitialCondition {
    let q = match lambda {
        LambdaSpec::UniformCube { side } => {
            let mut q = Vector::zeros(dim);
            for x in q.as_mut_slice() {
                *x = side * rng.random::<f64>();
            }
            q
        }
        LambdaSpec::PointMass { q } => Vector::new(q),
    };
    InitialCondition::Macroscopic { q, v: Direction::random(rng, dim) }
}

/// Mean free path ξ̄ = 1/(v_{d−1} c_P) in rescaled units.
pub fn mean_free_path(dim: usize, density: f64) -> f64 {
    1.0 / (unit_ball_volume(dim - 1) * density)
}

/// Default per-leg microscopic horizon 50 ξ̄ ρ^{1−d}.
pub fn default_horizon(cfg: &ScattererConfiguration, rho: f64) -> f64 {
    50.0 * mean_free_path(cfg.dim(), cfg.density()) / rho.powi(cfg.dim() as i32 - 1)
}

/// Earliest non-grazing scatterer entered along q + t v, 0 < t ≤ horizon
/// (microscopic units), with the collision applied.
pub fn first_collision(
    cfg: &ScattererConfiguration,
    map: &ScatteringMap,
    rho: f64,
    q: &Vector,
    v: &Direction,
    horizon: f64,
) -> Result<Leg> {
    let scale = ScaleParams::new(rho, cfg.dim())?;
    let mut hit = None;
    cfg.march_tube(q, v, rho, horizon, |c| {
        if c.impact_offset / rho > GRAZING {
            return false;
        }
        hit = Some(*c);
        true
    })?;
    let Some(c) = hit else { return Ok(Leg::NoHit) };
    let x = *q + v.vector() * c.flight_time;
    let entry = Direction::normalize((x - c.center.position) * (1.0 / rho))?;
    let r = rotation_to_e1(v);
    let mut w = perp(&entry.vector().rotate(&r));
    let wn = w.norm();
    if wn >= 1.0 {
        w = w * (GRAZING / wn);
    }
    let ex = map.exit_data(v, &w)?;
    let tau = c.flight_time + rho * map.interior_time(w.norm())?;
    let event = CollisionEvent {
        tau,
        xi: scale.xi_from_tau(tau),
        center: c.center,
        w,
        w_exit: ex.w_exit,
        v_in: *v,
        v_out: ex.v_plus,
        entry,
        exit: ex.b_plus,
    };
    let near = cfg.points_in_ball(&c.center.position, 2.0 * rho)?;
    if near.len() > 1 {
        return Ok(Leg::NonSeparated(event));
    }
    Ok(Leg::Hit(event))
}

/// Follows up to `n_collisions` collisions from `init`.
pub fn run_trajectory(
    cfg: &ScattererConfiguration,
    map: &ScatteringMap,
    rho: f64,
    init: &InitialCondition,
    n_collisions: usize,
    horizon_per_leg: f64,
) -> Result<TrajectoryOutcome> {
    if n_collisions == 0 {
        return Err(Error::param("n_collisions must be at least 1"));
    }
    let d = cfg.dim();
    let scale = ScaleParams::new(rho, d)?;
    let (mut q, mut v) = match init {
        InitialCondition::Macroscopic { q, v } => {
            if q.dim() != d || v.dim() != d {
                return Err(Error::param("initial condition has the wrong dimension"));
            }
            let x = scale.to_micro(q);
            if !cfg.points_in_ball(&x, rho)?.is_empty() {
                return Ok(TrajectoryOutcome { events: vec![], termination: Termination::Trapped });
            }
            (x, *v)
        }
        InitialCondition::FromScattererExit { center, w_exit, v } => {
            if w_exit.dim() + 1 != d || v.dim() != d {
                return Err(Error::param("exit parameter has the wrong dimension"));
            }
            if w_exit.norm() >= 1.0 {
                return Err(Error::ImpactOutOfRange(w_exit.norm()));
            }
            (exit_position(center, w_exit, v, rho), *v)
        }
    };
    let mut events = Vec::with_capacity(n_collisions);
    while events.len() < n_collisions {
        match first_collision(cfg, map, rho, &q, &v, horizon_per_leg)? {
            Leg::Hit(e) => {
                q = e.center.position + e.exit.vector() * rho;
                v = e.v_out;
                events.push(e);
            }
            Leg::NoHit => return Ok(TrajectoryOutcome { events, termination: Termination::NoHitWithinHorizon }),
            Leg::NonSeparated(e) => {
                events.push(e);
                return Ok(TrajectoryOutcome { events, termination: Termination::NonSeparatedScatterer });
            }
        }
    }
    let n = events.len();
    Ok(TrajectoryOutcome { events, termination: Termination::Completed(n) })
}

/// Exit position q + ρβ⁺ with β⁺ = (√(1 − |w′|²), w′) R(v)ᵀ.
pub fn exit_position(center: &MarkedPoint, w_exit: &Vector, v: &Direction, rho: f64) -> Vector {
    let first = (1.0 - w_exit.norm_sq()).max(0.0).sqrt();
    let b = Vector::with_first(first, w_exit).rotate(&rotation_to_e1(v).transpose());
    center.position + b * rho
}

/// Per-index stream of the base seed.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `job(i, rng_i)` for i in 0..n on a pool of `threads` workers
/// (0 = rayon default); results are in index order.
pub fn parallel_map<T, F>(n: usize, seed: u64, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(e.to_string()))?;
    Ok(pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| job(i, &mut trajectory_rng(seed, i as u64)))
            .collect()
    }))
}

/// Trajectories per work unit of [`fold_trajectories`]; fixed so that the
/// merge order does not depend on the thread count.
pub const BLOCK: usize = 1024;

/// Runs `n` trajectories with initial conditions from Λ (stream i for
/// trajectory i), folds each block with `fold` into a fresh `init()`, and
/// merges the block results in index order.
#[allow(clippy::too_many_arguments)]
pub fn fold_trajectories<A, I, F, M>(
    cfg: &ScattererConfiguration,
    map: &ScatteringMap,
    rho: f64,
    lambda: &LambdaSpec,
    n: usize,
    n_collisions: usize,
    seed: u64,
    threads: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize, &TrajectoryOutcome) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let d = cfg.dim();
    let horizon = default_horizon(cfg, rho);
    let blocks = n.div_ceil(BLOCK);
    let parts = parallel_map(blocks, seed, threads, |b, _| -> Result<A> {
        let mut acc = init();
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let mut rng = trajectory_rng(seed, i as u64);
            let start = sample_macroscopic_initial(&mut rng, lambda, d);
            let out = run_trajectory(cfg, map, rho, &start, n_collisions, horizon)?;
            fold(&mut acc, i, &out);
        }
        Ok(acc)
    })?;
    let mut total = init();
    for p in parts {
        merge(&mut total, p?);
    }
    Ok(total)
}
