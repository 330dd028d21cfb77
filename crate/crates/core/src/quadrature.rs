//! Gauss-Legendre quadrature: a cached fixed rule and a bisecting adaptive driver.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Node count of the base rule used everywhere in the crate.
pub const BASE_NODES: usize = 64;

fn base_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(BASE_NODES).unwrap()))
}

/// Cached Gauss-Legendre rule of arbitrary degree (rules are built once per degree).
pub fn rule(nodes: usize) -> &'static GaussLegendre {
    use std::collections::HashMap;
    use std::sync::Mutex;
    static RULES: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
    if nodes == BASE_NODES {
        return base_rule();
    }
    let map = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().unwrap();
    guard.entry(nodes).or_insert_with(|| {
        let n = NonZeroUsize::new(nodes.max(1)).unwrap();
        Box::leak(Box::new(GaussLegendre::new(n)))
    })
}

/// Fixed 64-node Gauss-Legendre on [a, b].
pub fn gauss_legendre<F: FnMut(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    base_rule().integrate(a, b, f)
}

/// Adaptive Gauss-Legendre: a panel is accepted when the 64-node estimate on
/// it agrees with the sum over its two halves to within `max(abs_tol, rel_tol·|I|)`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    const MAX_DEPTH: u32 = 60;
    const MAX_PANELS: usize = 20_000;
    let whole = gauss_legendre(a, b, &mut f);
    let mut stack = vec![(a, b, whole, 0u32)];
    let mut total = 0.0;
    let mut panels = 0usize;
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gauss_legendre(lo, mid, &mut f);
        let right = gauss_legendre(mid, hi, &mut f);
        let refined = left + right;
        panels += 1;
        let scale = (abs_tol / (b - a).abs().max(f64::MIN_POSITIVE)) * (hi - lo).abs();
        let tol = scale.max(rel_tol * refined.abs());
        if !refined.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        if (refined - est).abs() <= tol || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH && (refined - est).abs() > 1e3 * tol {
                return Err(Error::Quadrature(format!(
                    "no convergence on [{lo}, {hi}] (error {:e})",
                    (refined - est).abs()
                )));
            }
            total += refined;
        } else {
            if panels > MAX_PANELS {
                return Err(Error::Quadrature("panel budget exhausted".into()));
            }
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rule_polynomial_exact() {
        let v = gauss_legendre(0.0, 2.0, |x| x.powi(7));
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        // ∫_0^1 1/sqrt(x + 1e-8) dx = 2(sqrt(1 + 1e-8) - 1e-4)
        let exact = 2.0 * ((1.0f64 + 1e-8).sqrt() - 1e-4);
        let v = adaptive(|x| 1.0 / (x + 1e-8).sqrt(), 0.0, 1.0, 1e-13, 1e-13).unwrap();
        assert!((v - exact).abs() < 1e-11, "{v} vs {exact}");
    }

    #[test]
    fn cached_rules_are_shared() {
        let a = rule(16) as *const _;
        let b = rule(16) as *const _;
        assert_eq!(a, b);
        let v = rule(16).integrate(-1.0, 1.0, |x| x * x);
        assert!((v - 2.0 / 3.0).abs() < 1e-14);
    }
}
