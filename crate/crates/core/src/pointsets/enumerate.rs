//! Integer points x ∈ Z^n with lo ≤ x·M ≤ hi (componentwise), for n ≤ 4.
//!
//! The range of x_k given x_0..x_{k−1} is read off the vertices of the slice
//! polytope: each vertex makes n − k of the box constraints active, so the
//! inverses of all square column subsets of the trailing rows are precomputed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_N: usize = 4;

#[derive(Clone, Debug)]
struct Subset {
    cols: Vec<usize>,
    /// Row-major f×f inverse of M[k.., cols].
    inv: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BoxEnumerator {
    n: usize,
    /// Row-major n×n generator matrix (rows are the lattice generators).
    m: Vec<f64>,
    levels: Vec<Vec<Subset>>,
}

fn subsets(n: usize, f: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|s| s.count_ones() as usize == f)
        .map(|s| (0..n).filter(|j| s & (1 << j) != 0).collect())
        .collect()
}

impl BoxEnumerator {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > MAX_N || rows.iter().any(|r| r.len() != n) {
            return Err(Error::param(format!("need a square basis with n ≤ {MAX_N}")));
        }
        let m: Vec<f64> = rows.iter().flatten().copied().collect();
        let full = DMatrix::from_row_slice(n, n, &m);
        let det = full.determinant();
        let scale = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).product::<f64>();
        if !(det.abs() > 1e-10 * scale.max(1e-300)) {
            return Err(Error::DegenerateBasis(det.abs()));
        }
        let mut levels = Vec::with_capacity(n);
        for k in 0..n {
            let f = n - k;
            let mut subs = Vec::new();
            for cols in subsets(n, f) {
                let a = DMatrix::from_fn(f, f, |i, j| m[(k + i) * n + cols[j]]);
                if let Some(inv) = a.try_inverse() {
                    if inv.iter().all(|v| v.is_finite()) {
                        let inv = (0..f).flat_map(|i| (0..f).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
                        subs.push(Subset { cols, inv });
                    }
                }
            }
            levels.push(subs);
        }
        Ok(BoxEnumerator { n, m, levels })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// |det M|.
    pub fn covolume(&self) -> f64 {
        DMatrix::from_row_slice(self.n, self.n, &self.m).determinant().abs()
    }

    /// y = x·M.
    pub fn image(&self, x: &[i64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate().take(self.n) {
            *yj = (0..self.n).map(|i| x[i] as f64 * self.m[i * self.n + j]).sum();
        }
    }

    /// Range of x_k over the slice polytope at the given prefix.
    fn slice_range(&self, k: usize, prefix: &[i64], lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
        let n = self.n;
        let f = n - k;
        let mut rlo = [0.0; MAX_N];
        let mut rhi = [0.0; MAX_N];
        for j in 0..n {
            let shift: f64 = (0..k).map(|i| prefix[i] as f64 * self.m[i * n + j]).sum();
            rlo[j] = lo[j] - shift;
            rhi[j] = hi[j] - shift;
        }
        let tol = 1e-9 * (1.0 + rlo.iter().chain(&rhi).fold(0.0f64, |a, b| a.max(b.abs())));
        let mut best: Option<(f64, f64)> = None;
        let mut z = [0.0; MAX_N];
        for sub in &self.levels[k] {
            for choice in 0u32..(1 << f) {
                let mut t = [0.0; MAX_N];
                for (a, &c) in sub.cols.iter().enumerate() {
                    t[a] = if choice & (1 << a) != 0 { rhi[c] } else { rlo[c] };
                }
                for i in 0..f {
                    z[i] = (0..f).map(|a| t[a] * sub.inv[a * f + i]).sum();
                }
                let feasible = (0..n).all(|j| {
                    let y: f64 = (0..f).map(|i| z[i] * self.m[(k + i) * n + j]).sum();
                    y >= rlo[j] - tol && y <= rhi[j] + tol
                });
                if feasible {
                    best = Some(match best {
                        None => (z[0], z[0]),
                        Some((a, b)) => (a.min(z[0]), b.max(z[0])),
                    });
                }
            }
        }
        best
    }

    /// Calls `f(x, y)` for every x ∈ Z^n with lo ≤ y = x·M ≤ hi.
    pub fn for_each<F: FnMut(&[i64], &[f64])>(&self, lo: &[f64], hi: &[f64], mut f: F) {
        let mut x = [0i64; MAX_N];
        self.recurse(0, &mut x, lo, hi, &mut f);
    }

    fn recurse<F: FnMut(&[i64], &[f64])>(&self, k: usize, x: &mut [i64; MAX_N], lo: &[f64], hi: &[f64], f: &mut F) {
        let Some((a, b)) = self.slice_range(k, &x[..k], lo, hi) else { return };
        let (a, b) = ((a - 1e-9).ceil() as i64, (b + 1e-9).floor() as i64);
        for v in a..=b {
            x[k] = v;
            if k + 1 == self.n {
                let mut y = [0.0; MAX_N];
                self.image(&x[..self.n], &mut y);
                if (0..self.n).all(|j| y[j] >= lo[j] && y[j] <= hi[j]) {
                    f(&x[..self.n], &y[..self.n]);
                }
            } else {
                self.recurse(k + 1, x, lo, hi, f);
            }
        }
    }
}
