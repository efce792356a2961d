//! Fiber eigensolves, Brillouin sweeps, gaps, multiplicities and edge reports.

use rayon::prelude::*;
use serde::Serialize;

use crate::edge::{refine_minimizer, Side, REFINE_TOL};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, Coefficients, FourierSeries};
use crate::linalg::{eigh, CMat};
use crate::planewave::{assemble_fiber, periodic_distance, shifted_laplacian_eigs, FiberMatrix, PlanewaveBasis};

pub const RESIDUAL_TOL: f64 = 1e-10;
pub const CLUSTER_TOL_REL: f64 = 1e-6;
pub const GAP_TOL_REL: f64 = 1e-8;

pub fn default_cluster_tol(lambda0: f64) -> f64 {
    CLUSTER_TOL_REL * lambda0.abs().max(1.0)
}

/// Uniform grid on `Y′ = [−1/2, 1/2)^d`, `M` points per axis, lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrillouinGrid {
    dim: usize,
    m: usize,
}

impl BrillouinGrid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidParams(format!("grid dimension {dim} not in {{1,2}}")));
        }
        if m < 3 {
            return Err(Error::InvalidParams(format!("grid needs at least 3 points per axis, got {m}")));
        }
        Ok(Self { dim, m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn coord(&self, i: usize) -> f64 {
        -0.5 + i as f64 / self.m as f64
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        match self.dim {
            1 => vec![self.coord(i)],
            _ => vec![self.coord(i / self.m), self.coord(i % self.m)],
        }
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// The `3^d − 1` periodic neighbours.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let m = self.m as i64;
        let wrap = |v: i64| ((v % m + m) % m) as usize;
        match self.dim {
            1 => vec![wrap(i as i64 - 1), wrap(i as i64 + 1)],
            _ => {
                let (a, b) = ((i / self.m) as i64, (i % self.m) as i64);
                let mut out = Vec::with_capacity(8);
                for da in -1..=1 {
                    for db in -1..=1 {
                        if da != 0 || db != 0 {
                            out.push(wrap(a + da) * self.m + wrap(b + db));
                        }
                    }
                }
                out
            }
        }
    }

    /// Nodes within periodic distance `r` of `eta`.
    pub fn ball(&self, eta: &[f64], r: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| periodic_distance(&self.node(i), eta) < r).collect()
    }

    pub fn nearest(&self, eta: &[f64]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| periodic_distance(&self.node(a), eta).total_cmp(&periodic_distance(&self.node(b), eta)))
            .expect("grid is nonempty")
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// `N × n`, columns orthonormal, phases fixed.
    pub vectors: CMat,
}

/// Lowest `n` eigenpairs with residual and orthonormality verified.
pub fn eigen_fiber(h: &FiberMatrix, n: usize) -> Result<Eigenpairs> {
    eigen_matrix(&h.matrix, n)
}

pub fn eigen_matrix(h: &CMat, n: usize) -> Result<Eigenpairs> {
    let size = h.nrows();
    if n > size {
        return Err(Error::InvalidParams(format!("requested {n} eigenpairs of a {size}x{size} matrix")));
    }
    let (values, vectors) = eigh(h)?;
    let vectors = vectors.columns(0, n).into_owned();
    let values = values[..n].to_vec();
    for (j, lam) in values.iter().enumerate() {
        let v = vectors.column(j);
        let r = h * v - v * num_complex::Complex64::new(*lam, 0.0);
        if !(r.norm() <= RESIDUAL_TOL * (1.0 + lam.abs())) {
            return Err(Error::SolverFailure(format!("residual {:.3e} for eigenvalue {lam}", r.norm())));
        }
    }
    let gram = vectors.adjoint() * &vectors;
    let defect = (gram - CMat::identity(n, n)).iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    if !(defect <= RESIDUAL_TOL) {
        return Err(Error::SolverFailure(format!("eigenvectors not orthonormal: defect {defect:.3e}")));
    }
    Ok(Eigenpairs { values, vectors })
}

/// Sorted eigenvalues of the fiber at `eta` (all `N`).
pub fn fiber_eigenvalues<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64]) -> Result<Vec<f64>> {
    crate::linalg::eigvalsh(&assemble_fiber(field, basis, eta).matrix)
}

#[derive(Debug, Clone)]
pub struct BandStructure {
    pub grid: BrillouinGrid,
    pub n_bands: usize,
    /// `values[node][n]`, ascending in `n`.
    pub values: Vec<Vec<f64>>,
    pub vectors: Option<Vec<CMat>>,
    pub sigma_minus: Vec<f64>,
    pub sigma_plus: Vec<f64>,
}

impl BandStructure {
    /// Value of band `band` (1-based) at node `i`.
    pub fn value(&self, i: usize, band: usize) -> f64 {
        self.values[i][band - 1]
    }

    pub fn band(&self, band: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[band - 1]).collect()
    }

    /// Nodes that are ≤ (or ≥) all `3^d − 1` periodic neighbours.
    pub fn local_extremizers(&self, band: usize, side: Side) -> Vec<usize> {
        let vals = self.band(band);
        (0..self.grid.len())
            .filter(|&i| {
                self.grid.neighbors(i).iter().all(|&j| match side {
                    Side::Min => vals[i] <= vals[j],
                    Side::Max => vals[i] >= vals[j],
                })
            })
            .collect()
    }
}

/// Sweep the grid; node eigensolves run in parallel, results merge in grid order.
pub fn compute_bands(
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    n_bands: usize,
    keep_vectors: bool,
) -> Result<BandStructure> {
    if n_bands == 0 || n_bands > basis.len() {
        return Err(Error::InvalidParams(format!("n_bands = {n_bands} must lie in 1..={}", basis.len())));
    }
    let results: Vec<Result<Eigenpairs>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let fiber = assemble_fiber(field, basis, &grid.node(i));
            eigen_fiber(&fiber, n_bands).map_err(|e| Error::SolverFailure(format!("node {i}: {e}")))
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut vectors = keep_vectors.then(Vec::new);
    for r in results {
        let pairs = r?;
        values.push(pairs.values);
        if let Some(v) = vectors.as_mut() {
            v.push(pairs.vectors);
        }
    }
    let mut sigma_minus = vec![f64::INFINITY; n_bands];
    let mut sigma_plus = vec![f64::NEG_INFINITY; n_bands];
    for row in &values {
        for (n, v) in row.iter().enumerate() {
            sigma_minus[n] = sigma_minus[n].min(*v);
            sigma_plus[n] = sigma_plus[n].max(*v);
        }
    }
    Ok(BandStructure { grid: grid.clone(), n_bands, values, vectors, sigma_minus, sigma_plus })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralGap {
    pub lower: f64,
    pub upper: f64,
    /// 1-based index of the band below the gap.
    pub band_below: usize,
    pub lower_nodes: Vec<usize>,
    pub upper_nodes: Vec<usize>,
}

fn attaining(vals: &[f64], target: f64) -> Vec<usize> {
    let tol = 1e-9 * target.abs().max(1.0);
    (0..vals.len()).filter(|&i| (vals[i] - target).abs() <= tol).collect()
}

/// Gap above band `n` iff `σ⁺_n < σ⁻_{n+1} − gap_tol`, `gap_tol = 1e−8·max(1, σ⁺_n)`.
pub fn find_gaps(bands: &BandStructure) -> Vec<SpectralGap> {
    let mut out = Vec::new();
    for n in 1..bands.n_bands {
        let lo = bands.sigma_plus[n - 1];
        let hi = bands.sigma_minus[n];
        let tol = GAP_TOL_REL * lo.abs().max(1.0);
        if lo < hi - tol {
            out.push(SpectralGap {
                lower: lo,
                upper: hi,
                band_below: n,
                lower_nodes: attaining(&bands.band(n), lo),
                upper_nodes: attaining(&bands.band(n + 1), hi),
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub eta: Vec<f64>,
    pub lambda0: f64,
    pub h: usize,
    pub values: Vec<f64>,
    /// `N × h` orthonormal cluster vectors.
    pub vectors: CMat,
    /// 1-based band index of the first cluster member.
    pub first_band: usize,
}

/// Eigenvalues within `cluster_tol` of `lambda0` at `eta`, with their vectors.
pub fn multiplicity_at<F: Coefficients + ?Sized>(
    field: &F,
    basis: &PlanewaveBasis,
    eta: &[f64],
    lambda0: f64,
    cluster_tol: f64,
) -> Result<Cluster> {
    let fiber = assemble_fiber(field, basis, eta);
    let pairs = eigen_fiber(&fiber, basis.len())?;
    let members: Vec<usize> = (0..pairs.values.len())
        .filter(|&j| (pairs.values[j] - lambda0).abs() <= cluster_tol)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyCluster { lambda0, tol: cluster_tol });
    }
    let vectors = CMat::from_fn(basis.len(), members.len(), |i, c| pairs.vectors[(i, members[c])]);
    Ok(Cluster {
        eta: fiber.eta,
        lambda0,
        h: members.len(),
        values: members.iter().map(|&j| pairs.values[j]).collect(),
        vectors,
        first_band: members[0] + 1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub c_n: f64,
    pub sup_diff: f64,
    pub holds: bool,
}

/// Max absolute entry of `A1 − A2` on the sample grid of the combined cutoff.
pub fn sup_entry_difference(a1: &FourierSeries, a2: &FourierSeries) -> f64 {
    a1.add_scaled(a2, -1.0).sample_stats().max_entry
}

/// `|λ_n(η;A1) − λ_n(η;A2)| ≤ d·c_n(η)·‖A1 − A2‖∞`.
pub fn check_continuity_bound(
    a1: &CoefficientField,
    a2: &CoefficientField,
    basis: &PlanewaveBasis,
    eta: &[f64],
    n: usize,
) -> Result<ContinuityReport> {
    let l1 = fiber_eigenvalues(a1, basis, eta)?;
    let l2 = fiber_eigenvalues(a2, basis, eta)?;
    let lhs = (l1[n - 1] - l2[n - 1]).abs();
    let c_n = shifted_laplacian_eigs(basis, eta, n)[n - 1];
    let sup_diff = sup_entry_difference(a1.series(), a2.series());
    let rhs = basis.dim() as f64 * c_n * sup_diff;
    Ok(ContinuityReport { lhs, rhs, c_n, sup_diff, holds: lhs <= rhs + 1e-10 })
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgePoint {
    pub eta: Vec<f64>,
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralEdgeReport {
    pub lambda0: f64,
    /// 1-based band attaining the edge.
    pub band: usize,
    pub side: Side,
    pub points: Vec<EdgePoint>,
    pub simple: bool,
    /// Distance from the edge to the neighbouring band across the gap.
    pub delta: f64,
    /// Bracketing constants `a < λ0 < b` with the edge band inside `(a, b)`.
    pub bracket_a: f64,
    pub bracket_b: f64,
    /// First band index lying entirely beyond `b`, if computed.
    pub band_beyond: Option<usize>,
    pub cluster_tol: f64,
}

/// Edge report for the gap on `side` of band `band`: minimizers for an
/// upper gap edge (`Side::Min`), maximizers for a lower one (`Side::Max`).
pub fn certify_edge(
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    bands: &BandStructure,
    band: usize,
    side: Side,
) -> Result<SpectralEdgeReport> {
    let grid = &bands.grid;
    let sign = side.sign();
    let eval = |eta: &[f64]| -> Result<f64> { Ok(sign * fiber_eigenvalues(field, basis, eta)?[band - 1]) };
    let mut refined: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in bands.local_extremizers(band, side) {
        let start = grid.node(i);
        let eta = match refine_minimizer(&eval, &start, grid.spacing(), REFINE_TOL) {
            Ok(e) => e,
            Err(Error::NotLocalMin(_)) => {
                log::debug!("candidate node {i} escaped its cell; kept unrefined");
                start
            }
            Err(e) => return Err(e),
        };
        let value = sign * eval(&eta)?;
        refined.push((eta, value));
    }
    if refined.is_empty() {
        return Err(Error::InvalidParams(format!("band {band} has no grid-local extremizer")));
    }
    let lambda0 = refined.iter().map(|(_, v)| sign * v).fold(f64::INFINITY, f64::min) * sign;
    let cluster_tol = default_cluster_tol(lambda0);
    let mut points: Vec<EdgePoint> = Vec::new();
    for (eta, value) in refined {
        if (value - lambda0).abs() > cluster_tol {
            continue;
        }
        if points.iter().any(|p| periodic_distance(&p.eta, &eta) < 1e-6) {
            continue;
        }
        let h = multiplicity_at(field, basis, &eta, lambda0, cluster_tol)?.h;
        points.push(EdgePoint { eta, value, multiplicity: h });
    }
    let (delta, neighbour_ok) = match side {
        Side::Min if band > 1 => {
            let d = lambda0 - bands.sigma_plus[band - 2];
            (d, d > cluster_tol)
        }
        Side::Min => (lambda0.max(0.0), true),
        Side::Max if band < bands.n_bands => {
            let d = bands.sigma_minus[band] - lambda0;
            (d, d > cluster_tol)
        }
        Side::Max => (f64::NAN, true),
    };
    let simple = neighbour_ok && points.iter().all(|p| p.multiplicity == 1);
    let (bracket_a, bracket_b, band_beyond) = match side {
        Side::Min => {
            let b = bands.sigma_plus[band - 1] + delta.max(0.0) / 2.0 + cluster_tol;
            let beyond = (band + 1..=bands.n_bands).find(|&n| bands.sigma_minus[n - 1] > b);
            (lambda0 - delta / 2.0, b, beyond)
        }
        Side::Max => (bands.sigma_minus[band - 1] - delta.max(0.0) / 2.0 - cluster_tol, lambda0 + delta / 2.0, None),
    };
    Ok(SpectralEdgeReport { lambda0, band, side, points, simple, delta, bracket_a, bracket_b, band_beyond, cluster_tol })
}

/// Edge report for one side of a detected gap.
pub fn certify_edge_hypotheses(
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    bands: &BandStructure,
    gap: &SpectralGap,
    upper: bool,
) -> Result<SpectralEdgeReport> {
    if upper {
        certify_edge(field, basis, bands, gap.band_below + 1, Side::Min)
    } else {
        certify_edge(field, basis, bands, gap.band_below, Side::Max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let g = BrillouinGrid::new(1, 4).unwrap();
        assert_eq!(g.nodes(), vec![vec![-0.5], vec![-0.25], vec![0.0], vec![0.25]]);
        assert_eq!(g.neighbors(0), vec![3, 1]);
        let g2 = BrillouinGrid::new(2, 3).unwrap();
        assert_eq!(g2.len(), 9);
        assert_eq!(g2.neighbors(4).len(), 8);
        assert!(BrillouinGrid::new(1, 2).is_err());
    }

    #[test]
    fn free_bands_match_analytic() {
        let basis = PlanewaveBasis::new(1, 6);
        let grid = BrillouinGrid::new(1, 9).unwrap();
        let bands = compute_bands(&CoefficientField::identity(1), &basis, &grid, 4, false).unwrap();
        for i in 0..grid.len() {
            let exact = shifted_laplacian_eigs(&basis, &grid.node(i), 4);
            for n in 0..4 {
                assert!((bands.values[i][n] - exact[n]).abs() < 1e-12);
            }
        }
        // odd M misses η = 0, where bands 2 and 3 touch
        let even = BrillouinGrid::new(1, 10).unwrap();
        let bands = compute_bands(&CoefficientField::identity(1), &basis, &even, 4, false).unwrap();
        assert!(find_gaps(&bands).is_empty());
    }

    #[test]
    fn multiplicities_of_free_operator() {
        let b1 = PlanewaveBasis::new(1, 4);
        let id1 = CoefficientField::identity(1);
        assert_eq!(multiplicity_at(&id1, &b1, &[0.5], 0.25, 1e-6).unwrap().h, 2);
        assert_eq!(multiplicity_at(&id1, &b1, &[0.3], 0.09, 1e-6).unwrap().h, 1);
        let b2 = PlanewaveBasis::new(2, 2);
        let id2 = CoefficientField::identity(2);
        assert_eq!(multiplicity_at(&id2, &b2, &[0.5, 0.5], 0.5, 1e-6).unwrap().h, 4);
        assert!(matches!(multiplicity_at(&id1, &b1, &[0.3], 0.5, 1e-6), Err(Error::EmptyCluster { .. })));
    }

    #[test]
    fn scaling_case_of_continuity_bound() {
        let basis = PlanewaveBasis::new(1, 4);
        let r = check_continuity_bound(
            &CoefficientField::identity(1),
            &CoefficientField::constant(1, 2.0),
            &basis,
            &[0.25],
            1,
        )
        .unwrap();
        assert!((r.lhs - 0.0625).abs() < 1e-14);
        assert!((r.rhs - 0.0625).abs() < 1e-14);
        assert!(r.holds);
        let same = check_continuity_bound(&CoefficientField::identity(1), &CoefficientField::identity(1), &basis, &[0.1], 2).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert!(same.holds);
    }

    #[test]
    fn touching_free_bands_are_not_simple() {
        let basis = PlanewaveBasis::new(1, 4);
        let grid = BrillouinGrid::new(1, 9).unwrap();
        let id = CoefficientField::identity(1);
        let bands = compute_bands(&id, &basis, &grid, 3, false).unwrap();
        let rep = certify_edge(&id, &basis, &bands, 2, Side::Min).unwrap();
        assert!((rep.lambda0 - 0.25).abs() < 1e-12);
        assert!(!rep.simple);
        assert_eq!(rep.points.len(), 1);
        assert_eq!(rep.points[0].multiplicity, 2);
    }

    #[test]
    fn free_2d_corner_is_fourfold() {
        let basis = PlanewaveBasis::new(2, 2);
        let grid = BrillouinGrid::new(2, 5).unwrap();
        let id = CoefficientField::identity(2);
        let bands = compute_bands(&id, &basis, &grid, 4, false).unwrap();
        let rep = certify_edge(&id, &basis, &bands, 1, Side::Max).unwrap();
        assert!((rep.lambda0 - 0.5).abs() < 1e-12);
        assert_eq!(rep.points.len(), 1);
        assert_eq!(rep.points[0].multiplicity, 4);
        assert!(!rep.simple);
    }
}
