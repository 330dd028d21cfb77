use lorentz::geometry::{Direction, Vector};
use lorentz::pointsets::{build_configuration, ConfigSpec, Mark, RayHitCandidate, ScattererConfiguration, Window};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn families() -> Vec<ScattererConfiguration> {
    [
        ConfigSpec::poisson(1.0, 7, 2),
        ConfigSpec::poisson(0.8, 1, 3),
        ConfigSpec::Cubic { dim: 2 },
        ConfigSpec::Cubic { dim: 3 },
        ConfigSpec::Honeycomb,
        ConfigSpec::Z4Toy,
        ConfigSpec::AmmannBeenker,
    ]
    .iter()
    .map(|s| build_configuration(s).unwrap())
    .collect()
}

/// Ray-sphere entry by brute force over a ball containing the segment.
fn brute_tube(cfg: &ScattererConfiguration, o: &Vector, u: &Direction, rho: f64, horizon: f64) -> Vec<RayHitCandidate> {
    let mid = *o + u.vector() * (horizon / 2.0);
    let mut out: Vec<RayHitCandidate> = cfg
        .points_in_ball(&mid, horizon / 2.0 + 1.0)
        .unwrap()
        .into_iter()
        .filter_map(|p| {
            // smaller root of |o + t u − c|² = ρ², in the cancellation-free form c/(b + √disc)
            let rel = p.position - *o;
            let tc = rel.dot(u);
            let c = rel.norm_sq() - rho * rho;
            let disc = tc * tc - c;
            if disc <= 0.0 || tc <= 0.0 {
                return None;
            }
            let te = c / (tc + disc.sqrt());
            let h = (rho * rho - disc).max(0.0).sqrt();
            (te > 0.0 && te <= horizon).then_some(RayHitCandidate { center: p, flight_time: te, impact_offset: h })
        })
        .collect();
    out.sort_by(lorentz::pointsets::candidate_order);
    out
}

#[test]
fn tube_query_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for cfg in families() {
        let d = cfg.dim();
        for _ in 0..100 {
            let o = Vector::new(&(0..d).map(|_| rng.random_range(-20.0..20.0)).collect::<Vec<_>>());
            let u = Direction::random(&mut rng, d);
            let rho = rng.random_range(0.02..0.2);
            let horizon = rng.random_range(0.5..15.0);
            let got = cfg.ray_tube_query(&o, &u, rho, horizon).unwrap();
            let want = brute_tube(&cfg, &o, &u, rho, horizon);
            assert_eq!(got.len(), want.len(), "{:?}", cfg.spec());
            for (a, b) in got.iter().zip(&want) {
                assert_eq!(a.center, b.center);
                // the oracle's discriminant loses ~|rel|²ε/ρ² relative accuracy
                assert!((a.flight_time - b.flight_time).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn honeycomb_counting_density() {
    let h = build_configuration(&ConfigSpec::Honeycomb).unwrap();
    // count in the square [−200, 200]² from a ball query covering it
    let pts = h.points_in_ball(&Vector::zeros(2), 200.0 * 2f64.sqrt() + 1.0).unwrap();
    let n = pts
        .iter()
        .filter(|p| p.position[0].abs() <= 200.0 && p.position[1].abs() <= 200.0)
        .count();
    let est = n as f64 / 400.0f64.powi(2);
    assert!((est - 4.0 / 3f64.sqrt()).abs() / est < 2e-3, "{est}");
}

#[test]
fn honeycomb_unit_covolume_gap() {
    let delta = 3f64.sqrt() / 2.0;
    let s = delta.powf(-0.5);
    let basis: Vec<Vec<f64>> = lorentz::pointsets::honeycomb_basis()
        .into_iter()
        .map(|r| r.into_iter().map(|x| x * s).collect())
        .collect();
    let spec = ConfigSpec::PeriodicUnion { basis, offsets: vec![vec![0.0, 0.0], vec![1.0 / 3.0, 1.0 / 3.0]] };
    let gap = build_configuration(&spec).unwrap().min_gap(5.0).unwrap();
    assert!((gap - 0.6204).abs() < 5e-5, "{gap}");
}

#[test]
fn poisson_count_in_large_ball() {
    let p = build_configuration(&ConfigSpec::poisson(1.0, 11, 2)).unwrap();
    let n = p.points_in_ball(&Vector::zeros(2), 100.0).unwrap().len() as f64;
    let mean = std::f64::consts::PI * 1e4;
    assert!((n - mean).abs() < 4.0 * mean.sqrt(), "{n}");
}

#[test]
fn deterministic_families_have_weyl_density() {
    let r: f64 = 150.0;
    for spec in [ConfigSpec::AmmannBeenker, ConfigSpec::Z4Toy, ConfigSpec::Honeycomb, ConfigSpec::Cubic { dim: 2 }] {
        let cfg = build_configuration(&spec).unwrap();
        let n = cfg.points_in_ball(&Vector::zeros(2), r).unwrap().len() as f64;
        let est = n / (std::f64::consts::PI * r * r);
        assert!((est - cfg.density()).abs() / cfg.density() < 0.01, "{spec:?}: {est}");
    }
}

#[test]
fn poisson_density_within_three_sigma() {
    let r: f64 = 150.0;
    let cfg = build_configuration(&ConfigSpec::poisson(2.5, 4, 2)).unwrap();
    let n = cfg.points_in_ball(&Vector::zeros(2), r).unwrap().len() as f64;
    let mean = 2.5 * std::f64::consts::PI * r * r;
    assert!((n - mean).abs() < 3.0 * mean.sqrt());
}

#[test]
fn poisson_min_gap_is_pairwise_minimum() {
    let cfg = build_configuration(&ConfigSpec::poisson(1.0, 7, 2)).unwrap();
    let pts = cfg.points_in_ball(&Vector::zeros(2), 20.0).unwrap();
    let mut best = f64::INFINITY;
    for a in &pts {
        for b in &pts {
            if a != b {
                best = best.min((a.position - b.position).norm());
            }
        }
    }
    assert_eq!(cfg.min_gap(20.0).unwrap(), best);
}

#[test]
fn cut_and_project_marks_in_window_and_injective() {
    for (spec, window) in [
        (ConfigSpec::AmmannBeenker, Window::regular_octagon(1.0)),
        (ConfigSpec::Z4Toy, Window::square(0.3)),
    ] {
        let cfg = build_configuration(&spec).unwrap();
        let mut pts = cfg.points_in_ball(&Vector::new(&[3.0, -7.0]), 30.0).unwrap();
        for p in &pts {
            let Mark::Internal(y) = p.mark else { panic!("expected an internal mark") };
            assert!(window.contains(y.as_slice()));
        }
        pts.sort_by(|a, b| a.position.lex_cmp(&b.position));
        assert!(pts.windows(2).all(|w| w[0].position != w[1].position));
        let total: f64 = cfg.mark_bin_measures().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn honeycomb_marks_are_components() {
    let cfg = build_configuration(&ConfigSpec::Honeycomb).unwrap();
    let pts = cfg.points_in_ball(&Vector::zeros(2), 10.0).unwrap();
    let ones = pts.iter().filter(|p| p.mark == Mark::Component(1)).count();
    let twos = pts.iter().filter(|p| p.mark == Mark::Component(2)).count();
    assert_eq!(ones + twos, pts.len());
    assert!(ones.abs_diff(twos) < 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn queries_do_not_depend_on_order(seed in 0u64..1000, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let cfg = build_configuration(&ConfigSpec::poisson(1.5, seed, 2)).unwrap();
        let c = Vector::new(&[x, y]);
        let first = cfg.points_in_ball(&c, 3.0).unwrap();
        let _ = cfg.points_in_ball(&Vector::new(&[-x, y + 10.0]), 8.0).unwrap();
        let again = build_configuration(&ConfigSpec::poisson(1.5, seed, 2)).unwrap().points_in_ball(&c, 3.0).unwrap();
        prop_assert_eq!(&first, &cfg.points_in_ball(&c, 3.0).unwrap());
        prop_assert_eq!(first, again);
    }

    #[test]
    fn tube_candidates_are_ordered_and_inside(ox in -5.0f64..5.0, oy in -5.0f64..5.0, a in 0.0f64..6.283, rho in 0.01f64..0.3) {
        let cfg = build_configuration(&ConfigSpec::AmmannBeenker).unwrap();
        let u = Direction::normalize(Vector::new(&[a.cos(), a.sin()])).unwrap();
        let hits = cfg.ray_tube_query(&Vector::new(&[ox, oy]), &u, rho, 20.0).unwrap();
        for w in hits.windows(2) {
            prop_assert!(w[0].flight_time <= w[1].flight_time);
        }
        for h in &hits {
            prop_assert!(h.impact_offset < rho && h.flight_time > 0.0 && h.flight_time <= 20.0);
        }
    }
}
