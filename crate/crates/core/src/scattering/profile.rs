//! Radial potential profiles W(r), supported in the unit ball.

use std::path::Path;

use crate::error::{Error, Result};

/// A radial potential W(r) on (0, 1], zero for r ≥ 1.
#[derive(Clone, Debug, PartialEq)]
pub enum PotentialProfile {
    /// Truncated Coulomb potential W(r) = α(1/r − 1).
    MuffinTin { alpha: f64 },
    /// W(r) = c(1 − r).
    LinearWall { c: f64 },
    /// Tabulated W, interpolated by a natural cubic spline.
    Table(CubicSpline),
}

impl PotentialProfile {
    pub fn muffin_tin(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha == 0.0 {
            return Err(Error::param(format!("muffin-tin alpha = {alpha} (need finite, ≠ 0)")));
        }
        Ok(PotentialProfile::MuffinTin { alpha })
    }

    pub fn linear_wall(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::param(format!("linear wall slope c = {c} must be positive")));
        }
        Ok(PotentialProfile::LinearWall { c })
    }

    /// Reads a two-column CSV `r, W(r)` (header row optional).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rs = Vec::new();
        let mut ws = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::param(format!("{}: expected two columns", path.display())));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(r), Ok(w)) => {
                    rs.push(r);
                    ws.push(w);
                }
                _ if rs.is_empty() => continue,
                _ => return Err(Error::param(format!("{}: unparsable row {rec:?}", path.display()))),
            }
        }
        Ok(PotentialProfile::Table(CubicSpline::new(rs, ws)?))
    }

    pub fn value(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            PotentialProfile::MuffinTin { alpha } => alpha * (1.0 / r - 1.0),
            PotentialProfile::LinearWall { c } => c * (1.0 - r),
            PotentialProfile::Table(s) => s.eval(r),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            PotentialProfile::MuffinTin { alpha } => -alpha / (r * r),
            PotentialProfile::LinearWall { c } => -c,
            PotentialProfile::Table(s) => s.deriv(r),
        }
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            PotentialProfile::MuffinTin { alpha } => 2.0 * alpha / (r * r * r),
            PotentialProfile::LinearWall { .. } => 0.0,
            PotentialProfile::Table(s) => s.second_deriv(r),
        }
    }

    /// (W(r) − W(r0)) / (r − r0) for r, r0 < 1, evaluated without cancellation
    /// where a closed form exists.
    pub fn divided_difference(&self, r0: f64, r: f64) -> f64 {
        match self {
            PotentialProfile::MuffinTin { alpha } => -alpha / (r * r0),
            PotentialProfile::LinearWall { c } => -c,
            PotentialProfile::Table(s) => {
                if (r - r0).abs() < 1e-7 {
                    s.deriv(0.5 * (r + r0))
                } else {
                    (s.eval(r) - s.eval(r0)) / (r - r0)
                }
            }
        }
    }

    /// −2(W(r) − W(r0))/(r − r0) − 2W(r0)(r + r0)/r², the part of the orbit
    /// factor G that does not cancel when W is singular at the origin.
    pub fn orbit_core(&self, r0: f64, r: f64) -> f64 {
        match self {
            PotentialProfile::MuffinTin { alpha } => 2.0 * alpha * (r + r0 - 1.0) / (r * r),
            _ => -2.0 * self.divided_difference(r0, r) - 2.0 * self.value(r0) * (r + r0) / (r * r),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PotentialProfile::MuffinTin { alpha } => format!("muffin_tin({alpha})"),
            PotentialProfile::LinearWall { c } => format!("linear_wall({c})"),
            PotentialProfile::Table(_) => "custom_table".into(),
        }
    }
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::param("spline needs at least three (r, W) rows"));
        }
        if x.windows(2).any(|p| !(p[1] > p[0])) || x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::param("spline knots must be finite and strictly increasing"));
        }
        // Tridiagonal system for the interior second derivatives (Thomas algorithm).
        let mut m = vec![0.0; n];
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let a = h0 / 6.0;
            let b = (h0 + h1) / 3.0;
            let c = h1 / 6.0;
            let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
            let denom = b - a * c_prime[i - 1];
            c_prime[i] = c / denom;
            d_prime[i] = (d - a * d_prime[i - 1]) / denom;
        }
        for i in (1..n - 1).rev() {
            m[i] = d_prime[i] - c_prime[i] * m[i + 1];
        }
        Ok(CubicSpline { x, y, m })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let a = (x1 - t) / h;
        let b = (t - x0) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        ((x1 - t) * self.m[i] + (t - x0) * self.m[i + 1]) / h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn spline_reproduces_line_exactly() {
        let x: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * (1.0 - r)).collect();
        let s = CubicSpline::new(x, y).unwrap();
        for t in [0.05, 0.33, 0.71, 0.99] {
            assert!((s.eval(t) - 2.0 * (1.0 - t)).abs() < 1e-13);
            assert!((s.deriv(t) + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_tracks_smooth_function() {
        let x: Vec<f64> = (0..=200).map(|i| 0.2 + 0.004 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|r| 1.0 / r - 1.0).collect();
        let s = CubicSpline::new(x, y).unwrap();
        for t in [0.3, 0.5, 0.77, 0.9] {
            assert!((s.eval(t) - (1.0 / t - 1.0)).abs() < 1e-7);
            assert!((s.deriv(t) + 1.0 / (t * t)).abs() < 1e-4);
        }
    }

    #[test]
    fn csv_table_loads() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "r,W").unwrap();
        for i in 0..=20 {
            let r = 0.05 + 0.95 * i as f64 / 20.0;
            writeln!(f, "{r},{}", 3.0 * (1.0 - r)).unwrap();
        }
        let p = PotentialProfile::from_csv(f.path()).unwrap();
        assert!((p.value(0.5) - 1.5).abs() < 1e-12);
        assert_eq!(p.value(1.2), 0.0);
    }

    #[test]
    fn muffin_tin_divided_difference_matches_quotient() {
        let p = PotentialProfile::muffin_tin(1.5).unwrap();
        let (a, b) = (0.4, 0.55);
        let q = (p.value(b) - p.value(a)) / (b - a);
        assert!((p.divided_difference(a, b) - q).abs() < 1e-12);
        assert!(PotentialProfile::muffin_tin(0.0).is_err());
        let direct = -2.0 * q - 2.0 * p.value(a) * (a + b) / (b * b);
        assert!((p.orbit_core(a, b) - direct).abs() < 1e-12);
    }
}
