use lorentz::dynamics::{trajectory_rng, LambdaSpec};
use lorentz::geometry::{Direction, Vector};
use lorentz::kernels::{estimate_k, estimate_kg, Bins, WLayout};
use lorentz::limitprocess::{continue_chain, sample_chain, ChainInit, FlightPath, KernelSource};
use lorentz::pointsets::{build_configuration, ConfigSpec};
use lorentz::scattering::ScatteringMap;
use lorentz::stats::{chi_square, correlation, ks_two_sample};
use proptest::prelude::*;

fn poisson(dim: usize) -> KernelSource {
    KernelSource::poisson(1.0, dim, ScatteringMap::hard_sphere()).unwrap()
}

fn chains(source: &KernelSource, n: usize, steps: usize, seed: u64) -> Vec<FlightPath> {
    let d = source.dim();
    (0..n)
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            sample_chain(source, &ChainInit::RandomVelocity { q0: Vector::zeros(d) }, steps, &mut rng).unwrap()
        })
        .collect()
}

#[test]
fn poisson_flights_are_exponential_and_independent() {
    let paths = chains(&poisson(2), 20_000, 4, 1);
    let xi: Vec<f64> = paths.iter().flat_map(|p| p.steps.iter().map(|s| s.xi)).collect();
    let mean = xi.iter().sum::<f64>() / xi.len() as f64;
    // standard error 0.5/√80000
    assert!((mean - 0.5).abs() < 4.0 * 0.5 / (xi.len() as f64).sqrt(), "{mean}");
    let a: Vec<f64> = paths.iter().map(|p| p.steps[1].xi).collect();
    let b: Vec<f64> = paths.iter().map(|p| p.steps[2].xi).collect();
    assert!(correlation(&a, &b).abs() < 4.0 / (a.len() as f64).sqrt());
    let w: Vec<f64> = paths.iter().map(|p| p.steps[1].w_exit.norm()).collect();
    assert!(correlation(&w, &b).abs() < 4.0 / (a.len() as f64).sqrt());
}

#[test]
fn three_dimensional_deflections_are_isotropic() {
    // hard sphere in d = 3: cos φ uniform on [−1, 1]
    let paths = chains(&poisson(3), 20_000, 3, 2);
    let mut counts = [0u64; 10];
    for p in &paths {
        let c = p.steps[1].v.dot(&p.steps[2].v);
        counts[(((c + 1.0) * 5.0) as usize).min(9)] += 1;
    }
    let (_, p) = chi_square(&counts, &[0.1; 10]);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn restart_from_theta_hat_has_the_same_law() {
    // Θ(2) sampled directly versus Θ̂(1) continued for one more unit of time
    let source = poisson(2);
    let paths = chains(&source, 20_000, 30, 3);
    let mut direct = Vec::new();
    let mut restarted = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        direct.push(p.theta(2.0).unwrap());
        let state = p.theta_hat(1.0).unwrap();
        let mut rng = trajectory_rng(99, i as u64);
        let cont = continue_chain(&source, &state, 30, &mut rng).unwrap();
        restarted.push(cont.theta(1.0).unwrap());
    }
    let x = |v: &[(Vector, Direction)], f: fn(&(Vector, Direction)) -> f64| v.iter().map(f).collect::<Vec<f64>>();
    let crit = 1.95 * (2.0 / 20_000f64).sqrt();
    for f in [|s: &(Vector, Direction)| s.0[0], |s: &(Vector, Direction)| s.0.norm(), |s: &(Vector, Direction)| s.1[1]] {
        let ks = ks_two_sample(&x(&direct, f), &x(&restarted, f));
        assert!(ks < crit, "{ks}");
    }
}

#[test]
fn empirical_kernels_reproduce_lattice_flights() {
    let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 }).unwrap();
    let map = ScatteringMap::hard_sphere();
    let bins = Bins { xi_max: 5.0, xi_bins: 50, w_layout: WLayout::Signed { n: 10 } };
    let lambda = LambdaSpec::UniformCube { side: 1.0 };
    let kg = estimate_kg(&cfg, &map, 0.01, 20_000, &bins, &lambda, 5, 0).unwrap();
    let k = estimate_k(&cfg, &map, 0.01, 4000, 11, &bins, &lambda, 6, 0).unwrap();
    let inside_mean = |counts: &[u64]| {
        let n: u64 = counts.iter().sum();
        counts.iter().enumerate().map(|(i, &c)| (i as f64 + 0.5) * 0.1 * c as f64).sum::<f64>() / n as f64
    };
    let k_marg = k.marginalize_conditions();
    let target = inside_mean(&k_marg.xi_marginal(0));
    let source = KernelSource::empirical(kg.hist, k, map, 1.0).unwrap();
    let paths = chains(&source, 5000, 6, 7);
    let xi: Vec<f64> = paths.iter().flat_map(|p| p.steps[1..].iter().map(|s| s.xi)).collect();
    let mean = xi.iter().sum::<f64>() / xi.len() as f64;
    assert!(xi.iter().all(|x| x.is_finite() && *x > 0.0 && *x < 5.0));
    assert!((mean / target - 1.0).abs() < 0.05, "{mean} vs {target}");
}

proptest! {
    #[test]
    fn positions_are_continuous_at_collisions(seed in any::<u64>()) {
        let mut rng = trajectory_rng(seed, 0);
        let p = sample_chain(&poisson(2), &ChainInit::RandomVelocity { q0: Vector::zeros(2) }, 8, &mut rng).unwrap();
        for (j, &t) in p.times.iter().enumerate().take(7) {
            let before = p.theta(t - 1e-9).unwrap();
            let after = p.theta(t + 1e-9).unwrap();
            prop_assert!((before.0 - after.0).norm() < 1e-8);
            prop_assert_eq!(after.1, p.steps[j].v);
            prop_assert_eq!(p.collisions_by(t + 1e-9), j + 1);
        }
        // Θ̂ carries the pending outgoing velocity
        let s = p.theta_hat(0.5 * p.times[0]).unwrap();
        prop_assert!((s.xi - 0.5 * p.times[0]).abs() < 1e-12);
        prop_assert_eq!(s.v_plus, p.steps[0].v);
    }
}
