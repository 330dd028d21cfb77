use std::f64::consts::PI;

use approx::assert_relative_eq;
use lorentz::dynamics::trajectory_rng;
use lorentz::geometry::{Direction, Vector};
use lorentz::kernels::PoissonKernel;
use lorentz::limitprocess::{ExtendedState, KernelSource};
use lorentz::scattering::ScatteringMap;
use lorentz::stats::ks_one_sample;
use lorentz::transport::{
    collision_term_quadrature, evolve_mc, evolve_states, perturbation_bound, poisson_kernel_l1_sigma, propagate,
    write_estimates_csv, ObservableEstimate, PhaseDensity, TestSet, VelocityLaw, XiLaw,
};
use proptest::prelude::*;

// hard disc, unit intensity: ξ̄ = 1/(c v₁) = 1/2
const XBAR: f64 = 0.5;

fn source() -> KernelSource {
    KernelSource::poisson(1.0, 2, ScatteringMap::hard_sphere()).unwrap()
}

fn big_box(xi: XiLaw) -> PhaseDensity {
    PhaseDensity::Separable { q_lo: vec![-50.0, -50.0], q_hi: vec![50.0, 50.0], velocity: VelocityLaw::Uniform, xi }
}

fn dir(a: f64) -> Direction {
    Direction::from_unit(Vector::new(&[a.cos(), a.sin()]))
}

fn probe(xi: f64, out: f64) -> ExtendedState {
    ExtendedState { q: Vector::new(&[0.3, -0.2]), v: dir(0.0), xi, mark_bin: 0, v_plus: dir(out) }
}

/// σ for the hard disc, ¼|v − v₊|.
fn sigma(a: f64) -> f64 {
    0.25 * 2.0 * (0.5 * a).sin().abs()
}

#[test]
fn zero_collision_term_is_the_shifted_density() {
    let f0 = big_box(XiLaw::Exponential { mean: 0.8 });
    let k = PoissonKernel::new(1.0, 2).unwrap();
    let map = ScatteringMap::hard_sphere();
    let (t, xi, out) = (0.9, 0.4, 2.1);
    let got = collision_term_quadrature(&k, &map, &f0, t, 0, &probe(xi, out)).unwrap();
    // vol⁻¹ (2π)⁻¹ h(ξ + t) σ / v₁
    let want = (-(xi + t) / 0.8f64).exp() / 0.8 * sigma(out) / 2.0 / (2.0 * PI) / 1e4;
    assert_relative_eq!(got, want, max_relative = 1e-12);
}

#[test]
fn one_collision_term_matches_closed_form() {
    let k = PoissonKernel::new(1.0, 2).unwrap();
    let map = ScatteringMap::hard_sphere();
    let len = 1.0;
    let f0 = big_box(XiLaw::Uniform { max: len });
    for &(t, xi, out) in &[(0.7, 0.2, 2.0), (1.6, 0.05, 1.0), (0.3, 1.0, -2.5)] {
        let got = collision_term_quadrature(&k, &map, &f0, t, 1, &probe(xi, out)).unwrap();
        // ∫dv₀ σ(v₀, v)/v₁ = 1, leaving c σ (ωL vol)⁻¹ ∫_0^{min(t,L)} e^{−(ξ+t−ξ₁)/ξ̄} dξ₁
        let m = f64::min(t, len);
        let want = sigma(out) / (2.0 * PI * len * 1e4) * XBAR * (-(xi + t) / XBAR).exp() * ((m / XBAR).exp() - 1.0);
        assert_relative_eq!(got, want, max_relative = 1e-6);
    }
    assert!(collision_term_quadrature(&k, &map, &f0, 1.0, 2, &probe(0.1, 1.0)).is_err());
}

#[test]
fn time_zero_reproduces_f0() {
    let f0 = big_box(XiLaw::Uniform { max: 2.0 });
    let ev = evolve_states(&source(), &f0, 0.0, 5000, 3, 2).unwrap();
    assert!(ev.iter().all(|e| e.collisions == 0));
    let xi: Vec<f64> = ev.iter().map(|e| e.state.xi).collect();
    assert!(ks_one_sample(&xi, |x| (x / 2.0).clamp(0.0, 1.0)) < 1.63 / (xi.len() as f64).sqrt());
}

fn within(e: &ObservableEstimate, exact: f64, what: &str) {
    assert!((e.value - exact).abs() <= 4.0 * e.std_error.max(1e-4), "{what}: {} vs {exact} ± {}", e.value, e.std_error);
}

#[test]
fn collision_counts_follow_the_series() {
    let len = 1.0;
    let f0 = big_box(XiLaw::Uniform { max: len });
    let sets = [
        TestSet { collisions: Some(0), ..Default::default() },
        TestSet { collisions: Some(1), ..Default::default() },
        TestSet::default(),
    ];
    for t in [0.4, 1.5] {
        let est = evolve_mc(&source(), &f0, t, &sets, 40_000, 11, 4).unwrap();
        let m = f64::min(t, len);
        within(&est[0], 1.0 - m / len, "n = 0");
        // P(ξ ≤ t < ξ + ξ₂) with ξ₂ exponential of mean ξ̄
        let p1 = XBAR / len * ((-(t - m) / XBAR).exp() - (-t / XBAR).exp());
        within(&est[1], p1, "n = 1");
        assert_eq!(est[2].value, 1.0);
    }
}

#[test]
fn stationary_density_survives_at_rate_one_over_mean_flight() {
    let f0 = PhaseDensity::PoissonStationary { c: 1.0, q_lo: vec![0.0, 0.0], q_hi: vec![1.0, 1.0] };
    let sets = [TestSet { collisions: Some(0), ..Default::default() }];
    let est = evolve_mc(&source(), &f0, XBAR, &sets, 40_000, 5, 4).unwrap();
    within(&est[0], (-1.0f64).exp(), "survival");
}

#[test]
fn nearby_kernels_stay_within_the_perturbation_bound() {
    let f0 = big_box(XiLaw::Exponential { mean: XBAR });
    let sets = [
        TestSet { collisions: Some(0), ..Default::default() },
        TestSet { xi: Some((0.0, 0.2)), ..Default::default() },
    ];
    let t = 0.5;
    let (c1, c2) = (1.0, 1.1);
    let a = KernelSource::poisson(c1, 2, ScatteringMap::hard_sphere()).unwrap();
    let b = KernelSource::poisson(c2, 2, ScatteringMap::hard_sphere()).unwrap();
    let ea = evolve_mc(&a, &f0, t, &sets, 20_000, 8, 2).unwrap();
    let eb = evolve_mc(&b, &f0, t, &sets, 20_000, 8, 2).unwrap();
    // ‖p₀‖_σ = c for the Poisson kernel
    let bound = perturbation_bound(f0.sigma_norm_bar(), c1, c2, poisson_kernel_l1_sigma(c1, c2, 2), t, 2.0);
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x.value - y.value).abs() <= bound, "{} {} {bound}", x.value, y.value);
    }
}

#[test]
fn estimates_csv_has_expected_columns() {
    let e = ObservableEstimate { value: 0.25, std_error: 0.01, n_terms_used: 3, truncation_bound: 1e-3 };
    let mut buf = Vec::new();
    write_estimates_csv(&[(0, 1.5, e)], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("set_id,t,estimate,std_error,truncation_bound"));
    assert_eq!(lines.next(), Some("0,1.5,0.25,0.01,0.001"));
}

#[test]
fn flat_box_is_rejected() {
    let f0 = PhaseDensity::Separable {
        q_lo: vec![0.0, 0.0],
        q_hi: vec![1.0, 0.0],
        velocity: VelocityLaw::Uniform,
        xi: XiLaw::Uniform { max: 1.0 },
    };
    assert!(evolve_states(&source(), &f0, 1.0, 10, 1, 1).is_err());
}

proptest! {
    #[test]
    fn propagation_moves_at_unit_speed(seed in 0u64..1000, a in -PI..PI, b in -PI..PI, xi in 0.01f64..3.0, t in 0.0f64..4.0) {
        let s = ExtendedState { q: Vector::new(&[1.0, 2.0]), v: dir(a), xi, mark_bin: 0, v_plus: dir(b) };
        let mut rng = trajectory_rng(seed, 0);
        let e = propagate(&source(), &s, t, &mut rng).unwrap();
        prop_assert!(e.state.xi > 0.0);
        prop_assert!((e.state.q - s.q).norm() <= t + 1e-12);
        if t < xi {
            prop_assert_eq!(e.collisions, 0);
            prop_assert!((e.state.q - (s.q + s.v.vector() * t)).norm() < 1e-12);
            prop_assert!((e.state.xi - (xi - t)).abs() < 1e-12);
        } else {
            prop_assert!(e.collisions >= 1);
        }
    }
}
