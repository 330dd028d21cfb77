use lorentz::dynamics::{
    default_horizon, parallel_map, run_trajectory, sample_macroscopic_initial, trajectory_rng, InitialCondition,
    LambdaSpec, Termination,
};
use lorentz::geometry::{perp, rotation_to_e1, Direction, Vector};
use lorentz::pointsets::{build_configuration, ConfigSpec};
use lorentz::scattering::ScatteringMap;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn legs_join_up(seed in any::<u64>(), d in 2usize..=3, rho in 0.02f64..0.1) {
        let cfg = build_configuration(&ConfigSpec::Cubic { dim: d }).unwrap();
        let map = ScatteringMap::hard_sphere();
        let mut rng = trajectory_rng(seed, 0);
        let init = sample_macroscopic_initial(&mut rng, &LambdaSpec::UniformCube { side: 1.0 }, d);
        let out = run_trajectory(&cfg, &map, rho, &init, 6, default_horizon(&cfg, rho)).unwrap();
        for pair in out.events.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            // exit of a, straight flight at unit speed, entry of b
            let start = a.center.position + a.exit.vector() * rho;
            let end = b.center.position + b.entry.vector() * rho;
            let gap = (start + a.v_out.vector() * b.tau - end).norm();
            prop_assert!(gap < 1e-8, "gap {gap}, tau {}, entry w {:?}", b.tau, b.w);
            prop_assert!((b.xi - rho.powi(d as i32 - 1) * b.tau).abs() < 1e-12);
            prop_assert!(b.v_in == a.v_out);
            prop_assert!(b.w.norm() < 1.0 && (b.w_exit.norm() - b.w.norm()).abs() < 1e-9);
        }
        if let Termination::Completed(n) = out.termination {
            prop_assert_eq!(n, out.events.len());
        }
    }

    #[test]
    fn reversed_flight_returns_to_previous_scatterer(seed in any::<u64>(), rho in 0.02f64..0.1) {
        let cfg = build_configuration(&ConfigSpec::Honeycomb).unwrap();
        let map = ScatteringMap::hard_sphere();
        let mut rng = trajectory_rng(seed, 1);
        let init = sample_macroscopic_initial(&mut rng, &LambdaSpec::UniformCube { side: 1.0 }, 2);
        let out = run_trajectory(&cfg, &map, rho, &init, 3, default_horizon(&cfg, rho)).unwrap();
        prop_assume!(out.termination == Termination::Completed(3));
        let (a, b) = (&out.events[1], &out.events[2]);
        let v = -b.v_in;
        let w_exit = perp(&b.entry.vector().rotate(&rotation_to_e1(&v)));
        let back = InitialCondition::FromScattererExit { center: b.center, w_exit, v };
        let rev = run_trajectory(&cfg, &map, rho, &back, 1, default_horizon(&cfg, rho)).unwrap();
        prop_assert_eq!(rev.events[0].center, a.center);
        prop_assert!((rev.events[0].tau - b.tau).abs() < 1e-8);
    }
}

#[test]
fn starts_inside_a_scatterer_are_trapped() {
    let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 }).unwrap();
    let rho = 0.05;
    // micro position (1, 1) + small offset = q ρ^{d−1}... macro q = x ρ^{d−1}
    let q = Vector::new(&[1.01 * rho, 0.99 * rho]);
    let init = InitialCondition::Macroscopic { q, v: Direction::e1(2) };
    let out = run_trajectory(&cfg, &ScatteringMap::hard_sphere(), rho, &init, 1, 1e4).unwrap();
    assert_eq!(out.termination, Termination::Trapped);
}

#[test]
fn empty_horizon_gives_no_hit() {
    // along a lattice row, between the scatterers
    let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 }).unwrap();
    let rho = 0.01;
    let q = Vector::new(&[0.5 * rho, 0.5 * rho]);
    let init = InitialCondition::Macroscopic { q, v: Direction::e1(2) };
    let out = run_trajectory(&cfg, &ScatteringMap::hard_sphere(), rho, &init, 1, 1e3).unwrap();
    assert_eq!(out.termination, Termination::NoHitWithinHorizon);
}

#[test]
fn parallel_map_is_independent_of_thread_count() {
    let job = |i: usize, rng: &mut rand_chacha::ChaCha8Rng| (i, rng.random::<u64>());
    let a = parallel_map(5000, 42, 1, job).unwrap();
    let b = parallel_map(5000, 42, 3, job).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].1, a[1].1);
}
