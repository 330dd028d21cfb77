use lorentz::dynamics::{LambdaSpec, BLOCK};
use lorentz::geometry::{random_in_ball, Vector};
use lorentz::kernels::{check_time_reversal, estimate_kg, Bins, KernelHistogram, PoissonKernel, WLayout};
use lorentz::pointsets::{build_configuration, ConfigSpec};
use lorentz::scattering::ScatteringMap;
use lorentz::stats::chi_square;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bins() -> Bins {
    Bins { xi_max: 2.5, xi_bins: 10, w_layout: WLayout::Signed { n: 8 } }
}

/// Bin probabilities of Exp(mean) on [0, max) in `n` bins plus the tail.
fn exp_bin_probs(mean: f64, max: f64, n: usize) -> Vec<f64> {
    let cdf = |x: f64| 1.0 - (-x / mean).exp();
    let mut p: Vec<f64> = (0..n).map(|i| cdf(max * (i + 1) as f64 / n as f64) - cdf(max * i as f64 / n as f64)).collect();
    p.push(1.0 - cdf(max));
    p
}

#[test]
fn poisson_kg_histogram_matches_exponential_law() {
    let cfg = build_configuration(&ConfigSpec::poisson(1.0, 21, 2)).unwrap();
    let est = estimate_kg(&cfg, &ScatteringMap::hard_sphere(), 0.01, 20_000, &bins(), &LambdaSpec::UniformCube { side: 1.0 }, 8, 0)
        .unwrap();
    let h = &est.hist;
    let mut observed = h.xi_marginal(0);
    observed.push(h.overflow.iter().sum());
    let (_, p) = chi_square(&observed, &exp_bin_probs(0.5, 2.5, 10));
    assert!(p > 1e-3, "ξ law p = {p}");
    let (_, p) = chi_square(&h.w_marginal(0), &[1.0 / 8.0; 8]);
    assert!(p > 1e-3, "w law p = {p}");
    assert_eq!(h.totals[0], 20_000 - est.trapped);
}

/// Conditional histogram filled from the Poisson kernel, for which
/// k(w′, ξ, w) does not depend on w′.
fn poisson_conditional(n: usize, seed: u64) -> KernelHistogram {
    let k = PoissonKernel::new(1.0, 2).unwrap();
    let mut h = KernelHistogram::new_conditional(2, &bins(), vec![1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let a = random_in_ball(&mut rng, 1);
        let xi = -k.mean_free_path() * (1.0 - rng.random::<f64>()).ln();
        let w = random_in_ball(&mut rng, 1);
        let cond = h.condition_of(&a, 0);
        h.add(cond, xi, &w, 0);
    }
    h
}

#[test]
fn time_reversal_holds_for_poisson_and_catches_corruption() {
    let h = poisson_conditional(400_000, 3);
    let rep = check_time_reversal(&h, 50).unwrap();
    assert!(rep.passes(4.0), "{rep:?}");
    let mut bad = h.clone();
    let i = h.idx(1, 0, 3, 0);
    bad.counts[i] = bad.counts[i] * 3 / 2;
    assert!(!check_time_reversal(&bad, 50).unwrap().passes(4.0));
}

#[test]
fn histogram_json_roundtrip_keeps_integer_counts() {
    let h = poisson_conditional(1000, 4);
    let s = serde_json::to_string(&h).unwrap();
    let back: KernelHistogram = serde_json::from_str(&s).unwrap();
    assert_eq!(back, h);
    assert!(!s.contains("counts\":[0.0"));
}

#[test]
fn empirical_density_integrates_to_one() {
    let h = poisson_conditional(50_000, 5);
    let g = h.to_density();
    let dx = 0.25;
    for cond in 0..g.conditions {
        let mut mass = 0.0;
        for ix in 0..g.xi_bins() {
            for iw in 0..8 {
                mass += g.value(cond, ix, iw, 0) * dx * g.cell_mu(iw, 0);
            }
        }
        for iw in 0..8 {
            mass += g.overflow[cond * 8 + iw] * g.cell_mu(iw, 0);
        }
        assert!((mass - 1.0).abs() < 1e-12, "{mass}");
    }
}

proptest! {
    #[test]
    fn merge_is_order_independent(xs in prop::collection::vec((0usize..8, 0.0f64..3.0, -0.999f64..0.999), 1..300), split in 0usize..300) {
        let fill = |items: &[(usize, f64, f64)]| {
            let mut h = KernelHistogram::new_conditional(2, &bins(), vec![1.0]).unwrap();
            for &(c, xi, w) in items {
                if xi > 2.9 {
                    h.add_defect(c);
                } else {
                    h.add(c, xi, &Vector::new(&[w]), 0);
                }
            }
            h
        };
        let split = split.min(xs.len());
        let whole = fill(&xs);
        let mut a = fill(&xs[..split]);
        let b = fill(&xs[split..]);
        let mut b2 = b.clone();
        a.merge(&b).unwrap();
        b2.merge(&fill(&xs[..split])).unwrap();
        prop_assert_eq!(&a, &whole);
        prop_assert_eq!(&b2, &whole);
        for c in 0..whole.conditions {
            let inside: u64 = whole.cell_counts(c).iter().sum();
            let over: u64 = whole.overflow[c * 8..(c + 1) * 8].iter().sum();
            prop_assert_eq!(inside + over + whole.defects[c], whole.totals[c]);
        }
    }

    #[test]
    fn signed_cells_reflect(w in -0.999f64..0.999) {
        let l = WLayout::Signed { n: 8 };
        prop_assert_eq!(l.cell(&Vector::new(&[-w])), l.reflect(l.cell(&Vector::new(&[w]))));
    }
}

#[test]
fn kg_estimate_spans_several_blocks() {
    // more starts than one work block, so merging is exercised
    let cfg = build_configuration(&ConfigSpec::Cubic { dim: 2 }).unwrap();
    let n = 2 * BLOCK + 7;
    let est = estimate_kg(&cfg, &ScatteringMap::hard_sphere(), 0.05, n, &bins(), &LambdaSpec::UniformCube { side: 1.0 }, 1, 0)
        .unwrap();
    assert_eq!(est.hist.totals[0] + est.trapped, n as u64);
}
