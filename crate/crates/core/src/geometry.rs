//! Small fixed-capacity vectors for d ∈ {2, 3}, the rotation family R(v),
//! and the Boltzmann-Grad scaling maps.
//!
//! Vectors are row vectors: a rotation acts as `x ↦ x R`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 3;

/// A point or vector with 1 to 3 components.
///
/// Impact parameters live in R^{d−1}, so dimension 1 is allowed even though
/// the dynamics itself runs in d ∈ {2, 3}.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Vector {
    c: [f64; MAX_DIM],
    dim: usize,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Vector {
            c: [0.0; MAX_DIM],
            dim,
        }
    }

    /// Panics unless `1 <= xs.len() <= 3`.
    pub fn new(xs: &[f64]) -> Self {
        let mut v = Vector::zeros(xs.len());
        v.c[..xs.len()].copy_from_slice(xs);
        v
    }

    /// The `i`-th standard basis vector (0-based).
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Vector::zeros(dim);
        v.c[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.dim]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.c[..self.dim]
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.c[0] * other.c[0] + self.c[1] * other.c[1] + self.c[2] * other.c[2]
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    /// `self · R` for a row vector.
    pub fn rotate(&self, r: &Rotation) -> Vector {
        debug_assert_eq!(self.dim, r.dim);
        let mut out = Vector::zeros(self.dim);
        for j in 0..self.dim {
            let mut s = 0.0;
            for i in 0..self.dim {
                s += self.c[i] * r.m[i][j];
            }
            out.c[j] = s;
        }
        out
    }

    /// The first coordinate (the component along e1).
    pub fn first(&self) -> f64 {
        self.c[0]
    }

    /// Inverse of [`perp`]: prepend a first coordinate.
    pub fn with_first(first: f64, rest: &Vector) -> Vector {
        let mut v = Vector::zeros(rest.dim + 1);
        v.c[0] = first;
        v.c[1..=rest.dim].copy_from_slice(rest.as_slice());
        v
    }

    /// Lexicographic comparison, used for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &Vector) -> std::cmp::Ordering {
        for (a, b) in self.as_slice().iter().zip(other.as_slice()) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        self.dim.cmp(&other.dim)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.as_slice().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = String;
    fn try_from(xs: Vec<f64>) -> std::result::Result<Self, String> {
        if xs.is_empty() || xs.len() > MAX_DIM {
            return Err(format!("vector must have 1 to {MAX_DIM} components"));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err("vector components must be finite".into());
        }
        Ok(Vector::new(&xs))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(mut self, o: Vector) -> Vector {
        debug_assert_eq!(self.dim, o.dim);
        for i in 0..MAX_DIM {
            self.c[i] += o.c[i];
        }
        self
    }
}

impl AddAssign for Vector {
    fn add_assign(&mut self, o: Vector) {
        *self = *self + o;
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(mut self, o: Vector) -> Vector {
        debug_assert_eq!(self.dim, o.dim);
        for i in 0..MAX_DIM {
            self.c[i] -= o.c[i];
        }
        self
    }
}

impl SubAssign for Vector {
    fn sub_assign(&mut self, o: Vector) {
        *self = *self - o;
    }
}

impl Neg for Vector {
    type Output = Vector;
    fn neg(mut self) -> Vector {
        for x in &mut self.c {
            *x = -*x;
        }
        self
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    fn mul(mut self, s: f64) -> Vector {
        for x in &mut self.c {
            *x *= s;
        }
        self
    }
}

impl Mul<Vector> for f64 {
    type Output = Vector;
    fn mul(self, v: Vector) -> Vector {
        v * self
    }
}

/// A unit vector in S^{d−1}.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Direction(Vector);

impl Direction {
    /// Normalizes `v`; fails for the zero vector or non-finite input.
    pub fn normalize(v: Vector) -> Result<Direction> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::param(format!("cannot normalize {v:?}")));
        }
        Ok(Direction(v * (1.0 / n)))
    }

    /// Wraps a vector already known to be unit length.
    pub fn from_unit(v: Vector) -> Direction {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9, "not unit: {v:?}");
        Direction(v)
    }

    pub fn basis(dim: usize, i: usize) -> Direction {
        Direction(Vector::basis(dim, i))
    }

    pub fn e1(dim: usize) -> Direction {
        Direction::basis(dim, 0)
    }

    pub fn vector(&self) -> Vector {
        self.0
    }

    pub fn rotate(&self, r: &Rotation) -> Direction {
        Direction(self.0.rotate(r))
    }

    /// Uniform on the unit sphere.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Direction {
        loop {
            let mut v = Vector::zeros(dim);
            for x in v.as_mut_slice() {
                *x = StandardNormal.sample(rng);
            }
            if let Ok(d) = Direction::normalize(v) {
                return d;
            }
        }
    }
}

impl std::ops::Deref for Direction {
    type Target = Vector;
    fn deref(&self) -> &Vector {
        &self.0
    }
}

impl Neg for Direction {
    type Output = Direction;
    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<Direction> for Vec<f64> {
    fn from(v: Direction) -> Self {
        v.0.into()
    }
}

impl TryFrom<Vec<f64>> for Direction {
    type Error = String;
    fn try_from(xs: Vec<f64>) -> std::result::Result<Self, String> {
        let v = Vector::try_from(xs)?;
        Direction::normalize(v).map_err(|e| e.to_string())
    }
}

/// Uniform point in the open unit ball of dimension `dim`.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    loop {
        let mut v = Vector::zeros(dim);
        for x in v.as_mut_slice() {
            *x = rng.random_range(-1.0..1.0);
        }
        if v.norm_sq() < 1.0 {
            return v;
        }
    }
}

/// Volume of the unit ball in R^n (n = 0..=3).
pub fn unit_ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => panic!("unit_ball_volume: n = {n} unsupported"),
    }
}

/// Surface area ω(S^{d−1}) of the unit sphere in R^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// An orthogonal matrix with determinant +1, acting on row vectors.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; MAX_DIM]; MAX_DIM],
    dim: usize,
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.dim).map(|i| &self.m[i][..self.dim]).collect();
        write!(f, "Rotation{rows:?}")
    }
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Rotation { m, dim }
    }

    /// Builds from rows; the caller guarantees orthogonality.
    pub fn from_rows(rows: &[Vector]) -> Self {
        let dim = rows.len();
        let mut r = Rotation::identity(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.dim(), dim);
            r.m[i][..dim].copy_from_slice(row.as_slice());
        }
        r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn row(&self, i: usize) -> Vector {
        Vector::new(&self.m[i][..self.dim])
    }

    pub fn transpose(&self) -> Rotation {
        let mut t = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    /// Matrix product `self · other`, so that `x (A B) = (x A) B`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut out = Rotation::identity(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = (0..self.dim).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// max |R Rᵀ − I| entrywise.
    pub fn orthogonality_residual(&self) -> f64 {
        let p = self.compose(&self.transpose());
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.m[i][j] - target).abs());
            }
        }
        worst
    }

    /// max entrywise difference.
    pub fn max_abs_diff(&self, other: &Rotation) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                worst = worst.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        worst
    }

    /// Haar-random element of SO(dim), by Gram-Schmidt on Gaussian rows.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Rotation {
        let mut rows: Vec<Vector> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut v = Vector::zeros(dim);
            for x in v.as_mut_slice() {
                *x = StandardNormal.sample(rng);
            }
            for r in &rows {
                v = v - *r * v.dot(r);
            }
            let n = v.norm();
            if n > 1e-8 {
                rows.push(v * (1.0 / n));
            }
        }
        let mut r = Rotation::from_rows(&rows);
        if r.det() < 0.0 {
            for j in 0..dim {
                r.m[dim - 1][j] = -r.m[dim - 1][j];
            }
        }
        r
    }

    /// Embeds K ∈ SO(d−1) as diag(1, K) ∈ SO(d), acting on the perpendicular coordinates.
    pub fn embed_perp(k: &Rotation) -> Rotation {
        let mut r = Rotation::identity(k.dim + 1);
        for i in 0..k.dim {
            for j in 0..k.dim {
                r.m[i + 1][j + 1] = k.m[i][j];
            }
        }
        r
    }
}

/// The rotation R(v) with `v R(v) = e1`.
///
/// A Householder reflection sending v to −e1, followed by the flip
/// diag(−1, 1, …, 1). Continuous everywhere except at the pole −e1, where
/// diag(−1, −1, 1) (restricted to d) is returned.
pub fn rotation_to_e1(v: &Direction) -> Rotation {
    let dim = v.dim();
    let mut u = v.vector();
    u.c[0] += 1.0;
    let uu = u.norm_sq();
    let mut r = Rotation::identity(dim);
    if uu < 1e-300 {
        r.m[0][0] = -1.0;
        r.m[1][1] = -1.0;
        return r;
    }
    let s = 2.0 / uu;
    for i in 0..dim {
        for j in 0..dim {
            let h = if i == j { 1.0 } else { 0.0 } - s * u.c[i] * u.c[j];
            r.m[i][j] = if j == 0 { -h } else { h };
        }
    }
    r
}

/// x_⊥: drop the first coordinate.
pub fn perp(x: &Vector) -> Vector {
    assert!(x.dim() >= 2, "perp needs at least two coordinates");
    Vector::new(&x.as_slice()[1..])
}

/// Angle in [0, π] between two unit vectors.
pub fn angle(u: &Direction, v: &Direction) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos()
}

/// Scatterer radius ρ together with the dimension; the Boltzmann-Grad scalings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub rho: f64,
    pub dim: usize,
}

impl ScaleParams {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::param(format!("rho = {rho} must lie in (0, 1)")));
        }
        check_dim(dim)?;
        Ok(ScaleParams { rho, dim })
    }

    /// ρ^{d−1}: microscopic time → rescaled time.
    pub fn xi_factor(&self) -> f64 {
        self.rho.powi(self.dim as i32 - 1)
    }

    /// ξ = ρ^{d−1} τ.
    pub fn xi_from_tau(&self, tau: f64) -> f64 {
        self.xi_factor() * tau
    }

    pub fn tau_from_xi(&self, xi: f64) -> f64 {
        xi / self.xi_factor()
    }

    /// Macroscopic position q ↦ microscopic ρ^{1−d} q.
    pub fn to_micro(&self, q: &Vector) -> Vector {
        *q * (1.0 / self.xi_factor())
    }

    /// Microscopic position x ↦ macroscopic ρ^{d−1} x.
    pub fn to_macro(&self, x: &Vector) -> Vector {
        *x * self.xi_factor()
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::param(format!("dimension {dim} unsupported (use 2 or 3)")))
    }
}
