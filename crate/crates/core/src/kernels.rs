//! Histogram estimates of the transition kernels k(ω′, ξ, ω) and k^g(ξ, ω),
//! the closed-form Poisson kernels, and the kernel identities.
//!
//! Densities are taken against dξ dμ_Ω with μ_Ω(cell) = vol(w-cell)/v_{d−1}
//! times the mark probability, so a conditional density integrates to the
//! fraction of samples that landed inside [0, Ξ_max).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fold_trajectories, mean_free_path, LambdaSpec, Termination, TrajectoryOutcome};
use crate::error::{Error, Result};
use crate::geometry::{unit_ball_volume, Direction, Vector};
use crate::pointsets::ScattererConfiguration;
use crate::scattering::ScatteringMap;

/// Partition of the impact-parameter ball B₁^{d−1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WLayout {
    /// d = 2: `n` equal signed intervals of (−1, 1).
    Signed { n: usize },
    /// d = 3: equal-area rings (edges √(i/radial)) × angular sectors.
    Polar { radial: usize, angular: usize },
}

impl WLayout {
    pub fn default_for(dim: usize) -> WLayout {
        if dim == 2 {
            WLayout::Signed { n: 40 }
        } else {
            WLayout::Polar { radial: 10, angular: 8 }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            WLayout::Signed { .. } => 2,
            WLayout::Polar { .. } => 3,
        }
    }

    pub fn cells(&self) -> usize {
        match *self {
            WLayout::Signed { n } => n,
            WLayout::Polar { radial, angular } => radial * angular,
        }
    }

    pub fn cell(&self, w: &Vector) -> usize {
        match *self {
            WLayout::Signed { n } => (((w[0] + 1.0) * 0.5 * n as f64) as usize).min(n - 1),
            WLayout::Polar { radial, angular } => {
                let ir = ((w.norm_sq() * radial as f64) as usize).min(radial - 1);
                let a = w[1].atan2(w[0]).rem_euclid(2.0 * PI);
                let ia = ((a / (2.0 * PI) * angular as f64) as usize).min(angular - 1);
                ir * angular + ia
            }
        }
    }

    /// Lebesgue measure of a cell in R^{d−1}.
    pub fn cell_volume(&self, _i: usize) -> f64 {
        match *self {
            WLayout::Signed { n } => 2.0 / n as f64,
            WLayout::Polar { radial, angular } => PI / (radial * angular) as f64,
        }
    }

    pub fn sample_in_cell<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vector {
        match *self {
            WLayout::Signed { n } => {
                let lo = -1.0 + 2.0 * i as f64 / n as f64;
                Vector::new(&[lo + 2.0 / n as f64 * rng.random::<f64>()])
            }
            WLayout::Polar { radial, angular } => {
                let (ir, ia) = (i / angular, i % angular);
                let r2 = (ir as f64 + rng.random::<f64>()) / radial as f64;
                let a = (ia as f64 + rng.random::<f64>()) / angular as f64 * 2.0 * PI;
                let r = r2.sqrt();
                Vector::new(&[r * a.cos(), r * a.sin()])
            }
        }
    }

    /// Image of a cell under the reflection R with det R = −1 used for time
    /// reversal: w ↦ −w in d = 2, (w₁, w₂) ↦ (w₁, −w₂) in d = 3.
    pub fn reflect(&self, i: usize) -> usize {
        match *self {
            WLayout::Signed { n } => n - 1 - i,
            WLayout::Polar { angular, .. } => {
                let (ir, ia) = (i / angular, i % angular);
                ir * angular + (angular - 1 - ia)
            }
        }
    }

    /// Rotation by `k` angular sectors (d = 3).
    pub fn rotate(&self, i: usize, k: usize) -> usize {
        match *self {
            WLayout::Signed { .. } => i,
            WLayout::Polar { angular, .. } => {
                let (ir, ia) = (i / angular, i % angular);
                ir * angular + (ia + k) % angular
            }
        }
    }
}

/// Binning of ξ and ω.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bins {
    pub xi_max: f64,
    pub xi_bins: usize,
    pub w_layout: WLayout,
}

impl Bins {
    /// Ξ_max = 10ξ̄, 100 ξ-bins, default impact layout.
    pub fn default_for(cfg: &ScattererConfiguration) -> Bins {
        Bins {
            xi_max: 10.0 * mean_free_path(cfg.dim(), cfg.density()),
            xi_bins: 100,
            w_layout: WLayout::default_for(cfg.dim()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.xi_max > 0.0 && self.xi_max.is_finite()) || self.xi_bins == 0 || self.w_layout.cells() == 0 {
            return Err(Error::param("bins need xi_max > 0 and nonzero bin counts"));
        }
        if self.w_layout.dim() != dim {
            return Err(Error::param(format!("impact layout {:?} does not fit d = {dim}", self.w_layout)));
        }
        Ok(())
    }
}

/// Integer-count histogram over (condition, ξ, w-cell, mark bin). k^g uses a
/// single condition; k uses one condition per (w′-cell, mark bin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHistogram {
    pub dim: usize,
    pub xi_edges: Vec<f64>,
    pub w_layout: WLayout,
    pub mark_bins: usize,
    pub mark_measures: Vec<f64>,
    pub conditions: usize,
    /// Indexed [cond][xi][w][mark].
    pub counts: Vec<u64>,
    /// ξ ≥ Ξ_max, indexed [cond][w][mark].
    pub overflow: Vec<u64>,
    /// No hit within the horizon or non-separated scatterer, per condition.
    pub defects: Vec<u64>,
    pub totals: Vec<u64>,
}

impl KernelHistogram {
    pub fn new(dim: usize, bins: &Bins, mark_measures: Vec<f64>, conditions: usize) -> Result<Self> {
        bins.validate(dim)?;
        let nx = bins.xi_bins;
        let xi_edges = (0..=nx).map(|i| bins.xi_max * i as f64 / nx as f64).collect();
        let nw = bins.w_layout.cells();
        let nm = mark_measures.len();
        Ok(KernelHistogram {
            dim,
            xi_edges,
            w_layout: bins.w_layout,
            mark_bins: nm,
            mark_measures,
            conditions,
            counts: vec![0; conditions * nx * nw * nm],
            overflow: vec![0; conditions * nw * nm],
            defects: vec![0; conditions],
            totals: vec![0; conditions],
        })
    }

    /// Histogram whose conditions are the (w-cell, mark) cells themselves.
    pub fn new_conditional(dim: usize, bins: &Bins, mark_measures: Vec<f64>) -> Result<Self> {
        let c = bins.w_layout.cells() * mark_measures.len();
        Self::new(dim, bins, mark_measures, c)
    }

    pub fn xi_bins(&self) -> usize {
        self.xi_edges.len() - 1
    }

    pub fn xi_max(&self) -> f64 {
        *self.xi_edges.last().unwrap()
    }

    pub fn bin_width(&self) -> f64 {
        self.xi_max() / self.xi_bins() as f64
    }

    pub fn w_cells(&self) -> usize {
        self.w_layout.cells()
    }

    pub fn idx(&self, cond: usize, ix: usize, iw: usize, im: usize) -> usize {
        ((cond * self.xi_bins() + ix) * self.w_cells() + iw) * self.mark_bins + im
    }

    fn oidx(&self, cond: usize, iw: usize, im: usize) -> usize {
        (cond * self.w_cells() + iw) * self.mark_bins + im
    }

    /// Condition index of an exit (w′, mark bin).
    pub fn condition_of(&self, w_exit: &Vector, mark: usize) -> usize {
        self.w_layout.cell(w_exit) * self.mark_bins + mark
    }

    pub fn add(&mut self, cond: usize, xi: f64, w: &Vector, mark: usize) {
        let iw = self.w_layout.cell(w);
        self.totals[cond] += 1;
        if xi >= self.xi_max() {
            let o = self.oidx(cond, iw, mark);
            self.overflow[o] += 1;
        } else {
            let ix = ((xi / self.bin_width()) as usize).min(self.xi_bins() - 1);
            let i = self.idx(cond, ix, iw, mark);
            self.counts[i] += 1;
        }
    }

    pub fn add_defect(&mut self, cond: usize) {
        self.totals[cond] += 1;
        self.defects[cond] += 1;
    }

    fn same_layout(&self, o: &KernelHistogram) -> bool {
        self.dim == o.dim
            && self.xi_edges == o.xi_edges
            && self.w_layout == o.w_layout
            && self.mark_bins == o.mark_bins
            && self.conditions == o.conditions
    }

    pub fn merge(&mut self, o: &KernelHistogram) -> Result<()> {
        if !self.same_layout(o) {
            return Err(Error::BinMismatch("cannot merge histograms with different bins".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
        for (a, b) in self.overflow.iter_mut().zip(&o.overflow) {
            *a += b;
        }
        for (a, b) in self.defects.iter_mut().zip(&o.defects) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&o.totals) {
            *a += b;
        }
        Ok(())
    }

    /// μ_Ω of a (w-cell, mark) cell.
    pub fn cell_mu(&self, iw: usize, im: usize) -> f64 {
        self.w_layout.cell_volume(iw) / unit_ball_volume(self.dim - 1) * self.mark_measures[im]
    }

    pub fn density(&self, cond: usize, ix: usize, iw: usize, im: usize) -> f64 {
        let n = self.totals[cond];
        if n == 0 {
            return 0.0;
        }
        self.counts[self.idx(cond, ix, iw, im)] as f64 / (n as f64 * self.bin_width() * self.cell_mu(iw, im))
    }

    pub fn to_density(&self) -> DensityGrid {
        let (nx, nw, nm) = (self.xi_bins(), self.w_cells(), self.mark_bins);
        let mut values = vec![0.0; self.conditions * nx * nw * nm];
        let mut overflow = vec![0.0; self.conditions * nw * nm];
        for c in 0..self.conditions {
            let n = self.totals[c].max(1) as f64;
            for iw in 0..nw {
                for im in 0..nm {
                    let mu = self.cell_mu(iw, im);
                    for ix in 0..nx {
                        values[self.idx(c, ix, iw, im)] = self.density(c, ix, iw, im);
                    }
                    overflow[self.oidx(c, iw, im)] = self.overflow[self.oidx(c, iw, im)] as f64 / (n * mu);
                }
            }
        }
        DensityGrid {
            dim: self.dim,
            xi_edges: self.xi_edges.clone(),
            w_layout: self.w_layout,
            mark_measures: self.mark_measures.clone(),
            conditions: self.conditions,
            values,
            overflow,
        }
    }

    /// ξ-marginal counts of one condition (overflow excluded).
    pub fn xi_marginal(&self, cond: usize) -> Vec<u64> {
        (0..self.xi_bins())
            .map(|ix| {
                (0..self.w_cells())
                    .flat_map(|iw| (0..self.mark_bins).map(move |im| (iw, im)))
                    .map(|(iw, im)| self.counts[self.idx(cond, ix, iw, im)])
                    .sum()
            })
            .collect()
    }

    /// Counts per w-cell of one condition (all ξ, including overflow).
    pub fn w_marginal(&self, cond: usize) -> Vec<u64> {
        (0..self.w_cells())
            .map(|iw| {
                (0..self.mark_bins)
                    .map(|im| {
                        let inside: u64 = (0..self.xi_bins()).map(|ix| self.counts[self.idx(cond, ix, iw, im)]).sum();
                        inside + self.overflow[self.oidx(cond, iw, im)]
                    })
                    .sum()
            })
            .collect()
    }

    /// Sums all conditions into a single-condition histogram.
    pub fn marginalize_conditions(&self) -> KernelHistogram {
        let (nx, nw, nm) = (self.xi_bins(), self.w_cells(), self.mark_bins);
        let per = nx * nw * nm;
        let mut out = self.clone();
        out.conditions = 1;
        out.counts = (0..per).map(|i| (0..self.conditions).map(|c| self.counts[c * per + i]).sum()).collect();
        let per_o = nw * nm;
        out.overflow = (0..per_o).map(|i| (0..self.conditions).map(|c| self.overflow[c * per_o + i]).sum()).collect();
        out.defects = vec![self.defects.iter().sum()];
        out.totals = vec![self.totals.iter().sum()];
        out
    }

    /// Joint counts of (ξ-bin, w-cell, mark) of a condition, for sampling.
    pub fn cell_counts(&self, cond: usize) -> &[u64] {
        let per = self.xi_bins() * self.w_cells() * self.mark_bins;
        &self.counts[cond * per..(cond + 1) * per]
    }
}

/// Real-valued kernel density on histogram bins, with per-cell overflow mass
/// density (mass beyond Ξ_max per unit μ_Ω).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub dim: usize,
    pub xi_edges: Vec<f64>,
    pub w_layout: WLayout,
    pub mark_measures: Vec<f64>,
    pub conditions: usize,
    pub values: Vec<f64>,
    pub overflow: Vec<f64>,
}

impl DensityGrid {
    pub fn xi_bins(&self) -> usize {
        self.xi_edges.len() - 1
    }

    pub fn mark_bins(&self) -> usize {
        self.mark_measures.len()
    }

    pub fn idx(&self, cond: usize, ix: usize, iw: usize, im: usize) -> usize {
        ((cond * self.xi_bins() + ix) * self.w_layout.cells() + iw) * self.mark_bins() + im
    }

    pub fn cell_mu(&self, iw: usize, im: usize) -> f64 {
        self.w_layout.cell_volume(iw) / unit_ball_volume(self.dim - 1) * self.mark_measures[im]
    }

    pub fn value(&self, cond: usize, ix: usize, iw: usize, im: usize) -> f64 {
        self.values[self.idx(cond, ix, iw, im)]
    }

    /// Value at (ξ, w, mark) for condition `cond`; zero at or beyond Ξ_max.
    pub fn eval(&self, cond: usize, xi: f64, w: &Vector, mark: usize) -> f64 {
        let xmax = *self.xi_edges.last().unwrap();
        if !(0.0..xmax).contains(&xi) {
            return 0.0;
        }
        let ix = ((xi / xmax * self.xi_bins() as f64) as usize).min(self.xi_bins() - 1);
        self.value(cond, ix, self.w_layout.cell(w), mark)
    }

    /// Merges `factor_xi` consecutive ξ-bins and `factor_w` consecutive w-cells
    /// (mass-preserving averages).
    pub fn coarsen(&self, factor_xi: usize, factor_w: usize) -> Result<DensityGrid> {
        let nx = self.xi_bins();
        let nw = self.w_layout.cells();
        let layout = match self.w_layout {
            WLayout::Signed { n } if n % factor_w == 0 => WLayout::Signed { n: n / factor_w },
            WLayout::Polar { radial, angular } if radial % factor_w == 0 => WLayout::Polar { radial: radial / factor_w, angular },
            _ => return Err(Error::BinMismatch("w coarsening factor must divide the cell count".into())),
        };
        if nx % factor_xi != 0 {
            return Err(Error::BinMismatch("ξ coarsening factor must divide the bin count".into()));
        }
        let (cx, cw) = (nx / factor_xi, layout.cells());
        let nm = self.mark_bins();
        let fine_to_coarse_w = |iw: usize| match (self.w_layout, layout) {
            (WLayout::Signed { .. }, _) => iw / factor_w,
            (WLayout::Polar { angular, .. }, _) => (iw / angular) / factor_w * angular + iw % angular,
        };
        let mut values = vec![0.0; self.conditions * cx * cw * nm];
        let mut overflow = vec![0.0; self.conditions * cw * nm];
        let cidx = |c: usize, ix: usize, iw: usize, im: usize| ((c * cx + ix) * cw + iw) * nm + im;
        for c in 0..self.conditions {
            for iw in 0..nw {
                let jw = fine_to_coarse_w(iw);
                let frac = self.w_layout.cell_volume(iw) / layout.cell_volume(jw);
                for im in 0..nm {
                    for ix in 0..nx {
                        values[cidx(c, ix / factor_xi, jw, im)] += self.value(c, ix, iw, im) * frac / factor_xi as f64;
                    }
                    overflow[(c * cw + jw) * nm + im] += self.overflow[(c * nw + iw) * nm + im] * frac;
                }
            }
        }
        let xi_edges = (0..=cx).map(|i| self.xi_edges[i * factor_xi]).collect();
        Ok(DensityGrid {
            dim: self.dim,
            xi_edges,
            w_layout: layout,
            mark_measures: self.mark_measures.clone(),
            conditions: self.conditions,
            values,
            overflow,
        })
    }

    /// ∫ |f − g| dξ dμ_Ω over condition 0 of both grids.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.xi_edges != other.xi_edges || self.w_layout != other.w_layout || self.mark_measures != other.mark_measures {
            return Err(Error::BinMismatch("L¹ distance needs identical bins".into()));
        }
        let dx = self.xi_edges[1] - self.xi_edges[0];
        let mut s = 0.0;
        for ix in 0..self.xi_bins() {
            for iw in 0..self.w_layout.cells() {
                for im in 0..self.mark_bins() {
                    s += (self.value(0, ix, iw, im) - other.value(0, ix, iw, im)).abs() * dx * self.cell_mu(iw, im);
                }
            }
        }
        Ok(s)
    }

    /// Mean ξ of condition 0, bin midpoints (overflow ignored).
    pub fn mean_xi(&self) -> f64 {
        let dx = self.xi_edges[1] - self.xi_edges[0];
        let mut s = 0.0;
        for ix in 0..self.xi_bins() {
            let mid = 0.5 * (self.xi_edges[ix] + self.xi_edges[ix + 1]);
            for iw in 0..self.w_layout.cells() {
                for im in 0..self.mark_bins() {
                    s += mid * self.value(0, ix, iw, im) * dx * self.cell_mu(iw, im);
                }
            }
        }
        s
    }
}

/// k^g(ξ, ω) = v_{d−1} c ∫_ξ^∞ ∫ k(ω′, ξ′, ω) dμ_Ω(ω′) dξ′, averaged over each ξ-bin.
///
/// Within a bin the tail integral is linear in ξ (k is piecewise constant),
/// so its bin average is the mean of the two edge values. Mass beyond Ξ_max
/// is not reconstructed: the returned overflow is zero.
pub fn kg_from_k(k: &DensityGrid, c: f64) -> Result<DensityGrid> {
    let nw = k.w_layout.cells();
    let nm = k.mark_bins();
    if k.conditions != nw * nm {
        return Err(Error::BinMismatch(format!(
            "{} conditions for {} (w′, mark) cells",
            k.conditions,
            nw * nm
        )));
    }
    let nx = k.xi_bins();
    let dx = k.xi_edges[1] - k.xi_edges[0];
    let vc = unit_ball_volume(k.dim - 1) * c;
    let mut values = vec![0.0; nx * nw * nm];
    let overflow = vec![0.0; nw * nm];
    for a_w in 0..nw {
        for a_m in 0..nm {
            let a = a_w * nm + a_m;
            let mu_a = k.cell_mu(a_w, a_m);
            for iw in 0..nw {
                for im in 0..nm {
                    // tail[ix] = ∫_{ξ_ix}^∞ k(a, ·, b)
                    let mut tail = k.overflow[(a * nw + iw) * nm + im];
                    let mut right = tail;
                    for ix in (0..nx).rev() {
                        tail += k.value(a, ix, iw, im) * dx;
                        let avg = 0.5 * (tail + right);
                        values[(ix * nw + iw) * nm + im] += vc * mu_a * avg;
                        right = tail;
                    }
                }
            }
        }
    }
    Ok(DensityGrid {
        dim: k.dim,
        xi_edges: k.xi_edges.clone(),
        w_layout: k.w_layout,
        mark_measures: k.mark_measures.clone(),
        conditions: 1,
        values,
        overflow,
    })
}

/// Result of the time-reversal comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub max_z: f64,
    pub compared: usize,
    pub excluded: usize,
    /// (w′ cell, ξ bin, w cell) of the largest discrepancy.
    pub worst: Option<(usize, usize, usize)>,
}

impl SymmetryReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.compared > 0 && self.max_z <= threshold
    }
}

/// Compares k(a, ξ, b) with k(bR, ξ, aR), marks held fixed; cells with fewer
/// than `min_count` counts on either side are excluded.
pub fn check_time_reversal(h: &KernelHistogram, min_count: u64) -> Result<SymmetryReport> {
    let nw = h.w_cells();
    let nm = h.mark_bins;
    if h.conditions != nw * nm {
        return Err(Error::BinMismatch("time reversal needs a conditional histogram".into()));
    }
    let mut rep = SymmetryReport { max_z: 0.0, compared: 0, excluded: 0, worst: None };
    let l = h.w_layout;
    for a in 0..nw {
        for b in 0..nw {
            let (ra, rb) = (l.reflect(a), l.reflect(b));
            // each unordered pair once
            if (rb, ra) < (a, b) {
                continue;
            }
            for m1 in 0..nm {
                for m2 in 0..nm {
                    let c1 = a * nm + m1;
                    let c2 = rb * nm + m2;
                    for ix in 0..h.xi_bins() {
                        let n1 = h.counts[h.idx(c1, ix, b, m2)];
                        let n2 = h.counts[h.idx(c2, ix, ra, m1)];
                        if (rb, ra) == (a, b) && m1 == m2 {
                            continue;
                        }
                        if n1 < min_count || n2 < min_count {
                            rep.excluded += 1;
                            continue;
                        }
                        let k1 = h.density(c1, ix, b, m2);
                        let k2 = h.density(c2, ix, ra, m1);
                        let z = (k1 - k2).abs() / (k1 * k1 / n1 as f64 + k2 * k2 / n2 as f64).sqrt();
                        rep.compared += 1;
                        if z > rep.max_z {
                            rep.max_z = z;
                            rep.worst = Some((a, ix, b));
                        }
                    }
                }
            }
        }
    }
    Ok(rep)
}

/// Closed-form Poisson kernels: k = k^g = ξ̄⁻¹e^{−ξ/ξ̄}, p = p₀ = cσe^{−ξ/ξ̄}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonKernel {
    pub c: f64,
    pub dim: usize,
}

impl PoissonKernel {
    pub fn new(c: f64, dim: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::param(format!("intensity {c} must be positive")));
        }
        crate::geometry::check_dim(dim)?;
        Ok(PoissonKernel { c, dim })
    }

    pub fn mean_free_path(&self) -> f64 {
        mean_free_path(self.dim, self.c)
    }

    pub fn k(&self, xi: f64) -> f64 {
        if xi < 0.0 {
            return 0.0;
        }
        let m = self.mean_free_path();
        (-xi / m).exp() / m
    }

    pub fn kg(&self, xi: f64) -> f64 {
        self.k(xi)
    }

    /// ∫_ξ^∞ k.
    pub fn survival(&self, xi: f64) -> f64 {
        (-xi.max(0.0) / self.mean_free_path()).exp()
    }

    pub fn p(&self, map: &ScatteringMap, v: &Direction, xi: f64, v_plus: &Direction) -> f64 {
        if xi < 0.0 {
            return 0.0;
        }
        self.c * map.cross_section(v, v_plus) * (-xi / self.mean_free_path()).exp()
    }

    pub fn p0(&self, map: &ScatteringMap, _v0: &Direction, v: &Direction, xi: f64, v_plus: &Direction) -> f64 {
        self.p(map, v, xi, v_plus)
    }

    /// Bin-averaged density grid of k (all conditions equal).
    pub fn grid(&self, bins: &Bins, conditional: bool) -> Result<DensityGrid> {
        bins.validate(self.dim)?;
        let nw = bins.w_layout.cells();
        let conditions = if conditional { nw } else { 1 };
        let nx = bins.xi_bins;
        let dx = bins.xi_max / nx as f64;
        let mut values = Vec::with_capacity(conditions * nx * nw);
        for _ in 0..conditions {
            for ix in 0..nx {
                let (a, b) = (ix as f64 * dx, (ix + 1) as f64 * dx);
                let avg = (self.survival(a) - self.survival(b)) / dx;
                values.extend(std::iter::repeat_n(avg, nw));
            }
        }
        Ok(DensityGrid {
            dim: self.dim,
            xi_edges: (0..=nx).map(|i| i as f64 * dx).collect(),
            w_layout: bins.w_layout,
            mark_measures: vec![1.0],
            conditions,
            values,
            overflow: vec![self.survival(bins.xi_max); conditions * nw],
        })
    }
}

/// Collision kernels p and p₀ built from estimated k^g and k through the
/// impact-parameter chart of the scattering map.
#[derive(Clone, Debug)]
pub struct CollisionKernels {
    pub kg: DensityGrid,
    pub k: DensityGrid,
    pub map: ScatteringMap,
    /// c_P, for the bound p ≤ c_P σ.
    pub density: f64,
}

pub fn build_collision_kernels(kg: DensityGrid, k: DensityGrid, map: ScatteringMap, density: f64) -> CollisionKernels {
    CollisionKernels { kg, k, map, density }
}

impl CollisionKernels {
    fn cap(&self) -> f64 {
        unit_ball_volume(self.kg.dim - 1) * self.density
    }

    /// p(v; ξ, mark, v₊) = σ(v, v₊)/v_{d−1} · k^g(ξ, (w(v, v₊), mark)).
    pub fn p(&self, v: &Direction, xi: f64, mark: usize, v_plus: &Direction) -> f64 {
        let sigma = self.map.cross_section(v, v_plus);
        if sigma == 0.0 {
            return 0.0;
        }
        let Ok(w) = self.map.impact_for_exit(v, v_plus) else { return 0.0 };
        let kg = self.kg.eval(0, xi, &w, mark).min(self.cap());
        sigma / unit_ball_volume(self.kg.dim - 1) * kg
    }

    /// p₀(v₀, ς, v; ξ, ς₊, v₊) with the previous exit parameter read off the
    /// collision v₀ → v.
    pub fn p0(&self, v0: &Direction, mark0: usize, v: &Direction, xi: f64, mark: usize, v_plus: &Direction) -> f64 {
        let sigma = self.map.cross_section(v, v_plus);
        if sigma == 0.0 {
            return 0.0;
        }
        let (Ok(w0), Ok(w)) = (self.map.impact_for_exit(v0, v), self.map.impact_for_exit(v, v_plus)) else {
            return 0.0;
        };
        let Ok(ex) = self.map.exit_data(v0, &w0) else { return 0.0 };
        let cond = self.k.w_layout.cell(&ex.w_exit) * self.k.mark_bins() + mark0;
        let k = self.k.eval(cond, xi, &w, mark).min(self.cap());
        sigma / unit_ball_volume(self.kg.dim - 1) * k
    }
}

/// Empirical k^g with defect tallies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgEstimate {
    pub hist: KernelHistogram,
    pub no_hit: u64,
    pub non_separated: u64,
    pub trapped: u64,
}

impl KgEstimate {
    pub fn record(&mut self, cfg: &ScattererConfiguration, out: &TrajectoryOutcome) {
        match out.termination {
            Termination::Trapped => self.trapped += 1,
            Termination::NoHitWithinHorizon => {
                self.no_hit += 1;
                self.hist.add_defect(0);
            }
            Termination::NonSeparatedScatterer => {
                self.non_separated += 1;
                self.hist.add_defect(0);
            }
            Termination::Completed(_) => {
                let e = &out.events[0];
                self.hist.add(0, e.xi, &e.w, cfg.mark_bin(&e.center.mark));
            }
        }
    }

    pub fn merge(&mut self, o: &KgEstimate) -> Result<()> {
        self.hist.merge(&o.hist)?;
        self.no_hit += o.no_hit;
        self.non_separated += o.non_separated;
        self.trapped += o.trapped;
        Ok(())
    }
}

/// First collisions from macroscopic starts drawn from Λ. Trapped starts are
/// tallied but left out of the histogram totals.
#[allow(clippy::too_many_arguments)]
pub fn estimate_kg(
    cfg: &ScattererConfiguration,
    map: &ScatteringMap,
    rho: f64,
    n_samples: usize,
    bins: &Bins,
    lambda: &LambdaSpec,
    seed: u64,
    threads: usize,
) -> Result<KgEstimate> {
    let empty = KgEstimate {
        hist: KernelHistogram::new(cfg.dim(), bins, cfg.mark_bin_measures(), 1)?,
        no_hit: 0,
        non_separated: 0,
        trapped: 0,
    };
    fold_trajectories(
        cfg,
        map,
        rho,
        lambda,
        n_samples,
        1,
        seed,
        threads,
        || empty.clone(),
        |acc, _, out| acc.record(cfg, out),
        |a, b| a.merge(&b).expect("identical bins"),
    )
}

/// Conditional histograms of consecutive collisions (w′_j, ς_j) → (ξ_{j+1}, w_{j+1}, ς_{j+1}).
#[allow(clippy::too_many_arguments)]
pub fn estimate_k(
    cfg: &ScattererConfiguration,
    map: &ScatteringMap,
    rho: f64,
    n_trajectories: usize,
    n_collisions: usize,
    bins: &Bins,
    lambda: &LambdaSpec,
    seed: u64,
    threads: usize,
) -> Result<KernelHistogram> {
    let empty = KernelHistogram::new_conditional(cfg.dim(), bins, cfg.mark_bin_measures())?;
    fold_trajectories(
        cfg,
        map,
        rho,
        lambda,
        n_trajectories,
        n_collisions,
        seed,
        threads,
        || empty.clone(),
        |h, _, out| record_pairs(h, cfg, &out.events, out.termination),
        |a, b| a.merge(&b).expect("identical bins"),
    )
}

/// Adds the consecutive pairs of one trajectory; a terminal NoHit or
/// non-separated hit after a valid exit is counted as a defect of that exit's cell.
pub fn record_pairs(
    h: &mut KernelHistogram,
    cfg: &ScattererConfiguration,
    events: &[crate::dynamics::CollisionEvent],
    termination: Termination,
) {
    let valid = match termination {
        Termination::NonSeparatedScatterer => events.len().saturating_sub(1),
        _ => events.len(),
    };
    for j in 1..valid {
        let prev = &events[j - 1];
        let e = &events[j];
        let cond = h.condition_of(&prev.w_exit, cfg.mark_bin(&prev.center.mark));
        h.add(cond, e.xi, &e.w, cfg.mark_bin(&e.center.mark));
    }
    if valid >= 1 && matches!(termination, Termination::NoHitWithinHorizon | Termination::NonSeparatedScatterer) {
        let prev = &events[valid - 1];
        let cond = h.condition_of(&prev.w_exit, cfg.mark_bin(&prev.center.mark));
        h.add_defect(cond);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn poisson_closed_form() {
        let k = PoissonKernel::new(1.0, 2).unwrap();
        assert!((k.k(0.5) - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.mean_free_path(), 0.5);
        let total = crate::quadrature::adaptive(|x| k.k(x), 0.0, 40.0, 1e-14, 1e-14).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
        let mean = crate::quadrature::adaptive(|x| x * k.k(x), 0.0, 40.0, 1e-14, 1e-14).unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn polar_cells_partition_disc() {
        let l = WLayout::Polar { radial: 10, angular: 8 };
        let total: f64 = (0..l.cells()).map(|i| l.cell_volume(i)).sum();
        assert!((total - PI).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..l.cells() {
            let w = l.sample_in_cell(i, &mut rng);
            assert_eq!(l.cell(&w), i);
            assert_eq!(l.reflect(l.reflect(i)), i);
            let r = Vector::new(&[w[0], -w[1]]);
            assert_eq!(l.cell(&r), l.reflect(i));
        }
    }

    #[test]
    fn signed_cells_roundtrip() {
        let l = WLayout::Signed { n: 40 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..40 {
            let w = l.sample_in_cell(i, &mut rng);
            assert_eq!(l.cell(&w), i);
            assert_eq!(l.cell(&(-w)), l.reflect(i));
        }
    }

    #[test]
    fn merge_rejects_mismatched_bins() {
        let b1 = Bins { xi_max: 5.0, xi_bins: 10, w_layout: WLayout::Signed { n: 4 } };
        let b2 = Bins { xi_bins: 20, ..b1.clone() };
        let mut h1 = KernelHistogram::new(2, &b1, vec![1.0], 1).unwrap();
        let h2 = KernelHistogram::new(2, &b2, vec![1.0], 1).unwrap();
        assert!(matches!(h1.merge(&h2), Err(Error::BinMismatch(_))));
    }

    #[test]
    fn density_integrates_to_inside_fraction() {
        let b = Bins { xi_max: 1.0, xi_bins: 10, w_layout: WLayout::Signed { n: 4 } };
        let mut h = KernelHistogram::new(2, &b, vec![1.0], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            h.add(0, rng.random_range(0.0..2.0), &Vector::new(&[rng.random_range(-1.0..1.0)]), 0);
        }
        h.add_defect(0);
        let g = h.to_density();
        let mass: f64 = (0..10)
            .flat_map(|ix| (0..4).map(move |iw| (ix, iw)))
            .map(|(ix, iw)| g.value(0, ix, iw, 0) * 0.1 * g.cell_mu(iw, 0))
            .sum();
        let inside: u64 = h.counts.iter().sum();
        assert!((mass - inside as f64 / 1001.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_kg_from_k() {
        let pk = PoissonKernel::new(1.0, 2).unwrap();
        let bins = Bins { xi_max: 5.0, xi_bins: 250, w_layout: WLayout::Signed { n: 4 } };
        let k = pk.grid(&bins, true).unwrap();
        let kg = kg_from_k(&k, 1.0).unwrap();
        let dx = 0.02;
        for ix in [0usize, 10, 50, 200] {
            let (a, b) = (ix as f64 * dx, (ix + 1) as f64 * dx);
            let exact = (pk.survival(a) - pk.survival(b)) / dx;
            // trapezoid average of the exact tail ∫_ξ^∞ k on one bin
            let trap = 2.0 * 0.5 * (pk.survival(a) + pk.survival(b));
            let got = kg.value(0, ix, 1, 0);
            assert!((got - trap).abs() < 1e-12 * trap.max(1e-300) + 1e-15, "{got} {trap}");
            // trapezoid error on a convex exponential: (Δ/ξ̄)²/12
            assert!((got - exact).abs() / exact < (dx / 0.5f64).powi(2) / 12.0 * 1.01);
        }
    }
}
