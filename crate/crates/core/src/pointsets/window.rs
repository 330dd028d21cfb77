//! Acceptance windows in internal space R^m (m = 1 or 2) and the angular
//! binning of internal marks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Window {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Vertices of a convex polygon (m = 2), in either orientation.
    ConvexPolygon { vertices: Vec<[f64; 2]> },
}

impl Window {
    /// Centred square of the given area.
    pub fn square(area: f64) -> Window {
        let h = 0.5 * area.sqrt();
        Window::Box {
            lo: vec![-h, -h],
            hi: vec![h, h],
        }
    }

    /// Regular octagon centred at the origin with edges along the directions kπ/4.
    pub fn regular_octagon(edge: f64) -> Window {
        let r = edge / (2.0 * (PI / 8.0).sin());
        let vertices = (0..8)
            .map(|k| {
                let a = PI / 8.0 + k as f64 * PI / 4.0;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Window::ConvexPolygon { vertices }
    }

    pub fn dim(&self) -> usize {
        match self {
            Window::Box { lo, .. } => lo.len(),
            Window::Ball { center, .. } => center.len(),
            Window::ConvexPolygon { .. } => 2,
        }
    }

    /// Checks shape consistency and a nonempty interior; orients polygons
    /// counter-clockwise.
    pub(crate) fn validated(mut self) -> Result<Window> {
        match &mut self {
            Window::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || lo.len() > 2 {
                    return Err(Error::param("box window needs matching lo/hi of length 1 or 2"));
                }
                if lo.iter().zip(hi.iter()).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::EmptyWindow);
                }
            }
            Window::Ball { center, radius } => {
                if center.is_empty() || center.len() > 2 {
                    return Err(Error::param("ball window must live in R^1 or R^2"));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::EmptyWindow);
                }
            }
            Window::ConvexPolygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::EmptyWindow);
                }
                let area = shoelace(vertices);
                if area.abs() < 1e-14 {
                    return Err(Error::EmptyWindow);
                }
                if area < 0.0 {
                    vertices.reverse();
                }
                let n = vertices.len();
                for i in 0..n {
                    let (a, b, c) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
                    if cross(sub(b, a), sub(c, b)) < -1e-12 {
                        return Err(Error::param("polygon window is not convex"));
                    }
                }
            }
        }
        Ok(self)
    }

    /// Closed-set membership.
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Window::Box { lo, hi } => y.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= *a && *v <= *b),
            Window::Ball { center, radius } => {
                let r2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2 <= radius * radius
            }
            Window::ConvexPolygon { vertices } => {
                let p = [y[0], y[1]];
                let n = vertices.len();
                (0..n).all(|i| cross(sub(vertices[(i + 1) % n], vertices[i]), sub(p, vertices[i])) >= 0.0)
            }
        }
    }

    /// Lebesgue measure μ(W).
    pub fn measure(&self) -> f64 {
        match self {
            Window::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Window::Ball { center, radius } => {
                if center.len() == 1 {
                    2.0 * radius
                } else {
                    PI * radius * radius
                }
            }
            Window::ConvexPolygon { vertices } => shoelace(vertices).abs(),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Window::Box { lo, hi } => (lo.clone(), hi.clone()),
            Window::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Window::ConvexPolygon { vertices } => {
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    pub fn centre(&self) -> Vec<f64> {
        match self {
            Window::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            Window::Ball { center, .. } => center.clone(),
            Window::ConvexPolygon { vertices } => {
                let n = vertices.len() as f64;
                let s = vertices.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
                vec![s[0] / n, s[1] / n]
            }
        }
    }

    /// Number of mark bins: two half-lines for m = 1, eight angular sectors
    /// around the centre for m = 2.
    pub fn mark_bins(&self) -> usize {
        if self.dim() == 1 {
            2
        } else {
            8
        }
    }

    pub fn mark_bin(&self, y: &[f64]) -> usize {
        let c = self.centre();
        if self.dim() == 1 {
            return usize::from(y[0] >= c[0]);
        }
        let a = (y[1] - c[1]).atan2(y[0] - c[0]).rem_euclid(2.0 * PI);
        ((a / (PI / 4.0)) as usize).min(7)
    }

    /// Fraction of μ(W) in each mark bin.
    pub fn mark_bin_fractions(&self) -> Vec<f64> {
        let c = self.centre();
        let total = self.measure();
        if self.dim() == 1 {
            let (lo, hi) = self.bounding_box();
            return vec![(c[0] - lo[0]) / (hi[0] - lo[0]), (hi[0] - c[0]) / (hi[0] - lo[0])];
        }
        let poly = match self {
            Window::Ball { .. } => return vec![0.125; 8],
            Window::Box { lo, hi } => vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]],
            Window::ConvexPolygon { vertices } => vertices.clone(),
        };
        let c = [c[0], c[1]];
        (0..8)
            .map(|k| {
                let (a0, a1) = (k as f64 * PI / 4.0, (k + 1) as f64 * PI / 4.0);
                let d0 = [a0.cos(), a0.sin()];
                let d1 = [a1.cos(), a1.sin()];
                // wedge = left of d0 and right of d1
                let p = clip(&poly, c, d0);
                let p = clip(&p, c, [-d1[0], -d1[1]]);
                shoelace(&p).abs() / total
            })
            .collect()
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn shoelace(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

/// Keeps the part of `poly` on the left of the line through `c` along `d`.
fn clip(poly: &[[f64; 2]], c: [f64; 2], d: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| cross(d, sub(p, c));
    let mut out = Vec::with_capacity(poly.len() + 2);
    let n = poly.len();
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let (sp, sq) = (side(p), side(q));
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octagon_geometry() {
        let w = Window::regular_octagon(1.0).validated().unwrap();
        assert!((w.measure() - 2.0 * (1.0 + 2f64.sqrt())).abs() < 1e-12);
        let Window::ConvexPolygon { vertices } = &w else { unreachable!() };
        for i in 0..8 {
            let e = sub(vertices[(i + 1) % 8], vertices[i]);
            assert!(((e[0] * e[0] + e[1] * e[1]).sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(w.contains(&[0.0, 0.0]));
        assert!(!w.contains(&[1.3, 0.0]));
    }

    #[test]
    fn sector_fractions_sum_to_one() {
        for w in [
            Window::square(0.3),
            Window::regular_octagon(1.0),
            Window::ConvexPolygon { vertices: vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]] },
        ] {
            let f = w.clone().validated().unwrap().mark_bin_fractions();
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{f:?}");
        }
        let f = Window::square(1.0).mark_bin_fractions();
        assert!(f.iter().all(|x| (x - 0.125).abs() < 1e-12));
    }

    #[test]
    fn degenerate_windows_rejected() {
        assert!(Window::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 0.0] }.validated().is_err());
        assert!(Window::ConvexPolygon { vertices: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]] }
            .validated()
            .is_err());
        assert!(Window::Ball { center: vec![0.0], radius: 0.0 }.validated().is_err());
    }

    #[test]
    fn clockwise_polygon_is_reoriented() {
        let w = Window::ConvexPolygon { vertices: vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]] }
            .validated()
            .unwrap();
        assert!(w.contains(&[0.5, 0.5]));
        assert!(!w.contains(&[1.5, 0.5]));
    }
}
