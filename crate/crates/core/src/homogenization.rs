//! Fiberwise exact and effective resolvents near a gap edge, ε sweeps,
//! the perturbed two-branch comparison, KLMN checks and the Bloch transform.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::edge::{hessian_fd, refine_minimizer, BranchEvaluator, FD_STEP, REFINE_TOL};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, PerturbationField};
use crate::linalg::{eigh, hermitize, norm_general, norm_hermitian, CMat, CVec};
use crate::planewave::{assemble_fiber, function_series, multiplication_matrix, PlanewaveBasis};
use crate::spectrum::BrillouinGrid;

pub const NEAR_SINGULAR_TOL: f64 = 1e-8;
pub const RESOLVENT_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct HomogParams {
    pub epsilons: Vec<f64>,
    pub kappa: f64,
    pub lambda0: f64,
    pub gap: (f64, f64),
}

impl HomogParams {
    pub fn new(epsilons: Vec<f64>, kappa: f64, lambda0: f64, gap: (f64, f64)) -> Result<Self> {
        if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidParams("epsilons must be positive".into()));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParams("epsilons must be strictly descending".into()));
        }
        if !(kappa > 0.0) {
            return Err(Error::InvalidParams("kappa must be positive".into()));
        }
        for e in &epsilons {
            let z = lambda0 - e * e * kappa * kappa;
            if !(z > gap.0 && z < gap.1) {
                return Err(Error::InvalidParams(format!("lambda0 - eps^2 kappa^2 = {z} leaves the gap at eps = {e}")));
            }
        }
        Ok(Self { epsilons, kappa, lambda0, gap })
    }
}

/// Cached eigendecomposition of one fiber.
#[derive(Debug, Clone)]
pub struct ExactFiber {
    pub eta: Vec<f64>,
    pub matrix: CMat,
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl ExactFiber {
    pub fn new(field: &CoefficientField, basis: &PlanewaveBasis, eta: &[f64]) -> Result<Self> {
        let fiber = assemble_fiber(field, basis, eta);
        let (values, vectors) = eigh(&fiber.matrix)?;
        Ok(Self { eta: fiber.eta, matrix: fiber.matrix, values, vectors })
    }

    pub fn distance(&self, z: f64) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min((v - z).abs()))
    }

    /// `(H − z)⁻¹`.
    pub fn resolvent(&self, z: f64) -> Result<CMat> {
        let dist = self.distance(z);
        if !(dist > NEAR_SINGULAR_TOL) {
            return Err(Error::NearSingular { z, dist, eta: self.eta.clone() });
        }
        Ok(crate::linalg::spectral_function(&self.values, &self.vectors, |v| 1.0 / (v - z)))
    }

    /// Spectral projector onto the bands with the given 1-based indices.
    pub fn projector(&self, bands: &[usize]) -> CMat {
        let n = self.values.len();
        let mut p = CMat::zeros(n, n);
        for &b in bands {
            let v = self.vectors.column(b - 1);
            p += &v * v.adjoint();
        }
        p
    }
}

/// `S(ε) = (H(η) − (λ0 − ε²κ²))⁻¹` with residual verification.
pub fn exact_resolvent_fiber(
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    eta: &[f64],
    lambda0: f64,
    eps: f64,
    kappa: f64,
) -> Result<CMat> {
    let fiber = ExactFiber::new(field, basis, eta)?;
    let z = lambda0 - eps * eps * kappa * kappa;
    let s = fiber.resolvent(z)?;
    let n = basis.len();
    let shifted = &fiber.matrix - CMat::identity(n, n) * Complex64::new(z, 0.0);
    let resid = norm_general(&(shifted * &s - CMat::identity(n, n)))?;
    if !(resid <= RESOLVENT_RESIDUAL_TOL) {
        return Err(Error::SolverFailure(format!("resolvent residual {resid:.3e} at eta = {eta:?}")));
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct EffectiveBranch {
    pub eta: Vec<f64>,
    /// Quadratic form of the branch at its extremum.
    pub b: DMatrix<f64>,
    /// Unit planewave coefficients of the edge eigenvector.
    pub phi: CVec,
}

#[derive(Debug, Clone)]
pub struct EffectiveResolventSpec {
    pub branches: Vec<EffectiveBranch>,
}

impl EffectiveResolventSpec {
    /// Same branches with every quadratic form multiplied by `s` (negative controls).
    pub fn with_scaled_forms(&self, s: f64) -> Self {
        Self {
            branches: self
                .branches
                .iter()
                .map(|b| EffectiveBranch { eta: b.eta.clone(), b: &b.b * s, phi: b.phi.clone() })
                .collect(),
        }
    }
}

fn cell_volume(d: usize) -> f64 {
    (2.0 * PI).powi(d as i32)
}

fn branch_symbol(branch: &EffectiveBranch, basis: &PlanewaveBasis, eta: &[f64], eps: f64, kappa: f64) -> Vec<f64> {
    let d = basis.dim();
    (0..basis.len())
        .map(|p| {
            let k = basis.index(p);
            let xi: Vec<f64> = (0..d).map(|j| k[j] as f64 + eta[j] - branch.eta[j]).collect();
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += xi[i] * branch.b[(i, j)] * xi[j];
                }
            }
            1.0 / (q + eps * eps * kappa * kappa)
        })
        .collect()
}

/// `Σ_j |Y|·M_φj·diag(w_j·D_j)·M_φjᴴ`; `weight` masks symbol entries (all ones for the full fiber).
fn effective_with_weights(
    spec: &EffectiveResolventSpec,
    basis: &PlanewaveBasis,
    eta: &[f64],
    eps: f64,
    kappa: f64,
    weight: &dyn Fn(usize, &EffectiveBranch, usize) -> f64,
) -> CMat {
    let n = basis.len();
    let vol = cell_volume(basis.dim());
    let mut out = CMat::zeros(n, n);
    for (j, br) in spec.branches.iter().enumerate() {
        let (m, _) = multiplication_matrix(&function_series(&br.phi, basis), basis);
        let sym = branch_symbol(br, basis, eta, eps, kappa);
        let mut scaled = m.clone();
        for (c, s) in sym.iter().enumerate() {
            scaled.column_mut(c).scale_mut(vol * s * weight(j, br, c));
        }
        out += scaled * m.adjoint();
    }
    hermitize(&mut out);
    out
}

/// Fiber of the effective resolvent at `eta`.
pub fn effective_resolvent_fiber(spec: &EffectiveResolventSpec, basis: &PlanewaveBasis, eta: &[f64], eps: f64, kappa: f64) -> CMat {
    effective_with_weights(spec, basis, eta, eps, kappa, &|_, _, _| 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    /// 95% confidence interval for the slope (infinite with two points).
    pub ci95: (f64, f64),
}

/// Least-squares fit of `log y` against `log x`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> LogLogFit {
    let n = x.len();
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let residual = (sse / n as f64).sqrt();
    let ci95 = if n > 2 {
        let se = (sse / (n - 2) as f64 / sxx).sqrt();
        let q = StudentsT::new(0.0, 1.0, (n - 2) as f64).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::INFINITY);
        (slope - q * se, slope + q * se)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    LogLogFit { slope, intercept, residual, ci95 }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub epsilons: Vec<f64>,
    pub scaled_norms: Vec<f64>,
    /// `ε²·scaled_norms`: the unscaled resolvent difference.
    pub r_norms: Vec<f64>,
    pub fit: LogLogFit,
    pub kappa: f64,
    pub cutoff: usize,
    pub points_per_axis: usize,
    /// R-norms on a grid with half as many points per axis.
    pub half_grid: Option<Vec<f64>>,
    /// R-norms at half the cutoff.
    pub half_cutoff: Option<Vec<f64>>,
}

fn sweep_norms(
    field: &CoefficientField,
    spec: &EffectiveResolventSpec,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    params: &HomogParams,
) -> Result<Vec<f64>> {
    let per_node: Vec<Result<Vec<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let eta = grid.node(i);
            let fiber = ExactFiber::new(field, basis, &eta)?;
            params
                .epsilons
                .iter()
                .map(|&e| {
                    let z = params.lambda0 - e * e * params.kappa * params.kappa;
                    let s = fiber.resolvent(z).map_err(|err| match err {
                        Error::NearSingular { z, dist, eta } => {
                            Error::NearSingular { z, dist, eta: [eta, vec![e]].concat() }
                        }
                        other => other,
                    })?;
                    norm_hermitian(&(s - effective_resolvent_fiber(spec, basis, &fiber.eta, e, params.kappa)))
                })
                .collect()
        })
        .collect();
    let mut best = vec![0.0_f64; params.epsilons.len()];
    for r in per_node {
        for (b, v) in best.iter_mut().zip(r?) {
            *b = b.max(v);
        }
    }
    Ok(best)
}

/// `sup_η ‖S(ε) − S⁰(ε)‖` for each ε and the log-log slope of `ε²·sup`.
pub fn norm_difference_sweep(
    field: &CoefficientField,
    spec: &EffectiveResolventSpec,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    params: &HomogParams,
) -> Result<ComparisonReport> {
    let scaled_norms = sweep_norms(field, spec, basis, grid, params)?;
    let r_norms: Vec<f64> = scaled_norms.iter().zip(&params.epsilons).map(|(s, e)| s * e * e).collect();
    Ok(ComparisonReport {
        fit: fit_loglog(&params.epsilons, &r_norms),
        epsilons: params.epsilons.clone(),
        scaled_norms,
        r_norms,
        kappa: params.kappa,
        cutoff: basis.cutoff(),
        points_per_axis: grid.points_per_axis(),
        half_grid: None,
        half_cutoff: None,
    })
}

/// Sweep plus the `M/2` and `K/2` diagnostics; `build_spec` rebuilds the effective data for a basis.
pub fn norm_difference_sweep_with_diagnostics(
    field: &CoefficientField,
    build_spec: &dyn Fn(&PlanewaveBasis) -> Result<EffectiveResolventSpec>,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    params: &HomogParams,
) -> Result<ComparisonReport> {
    let spec = build_spec(basis)?;
    let mut report = norm_difference_sweep(field, &spec, basis, grid, params)?;
    let rescale = |v: Vec<f64>| v.iter().zip(&params.epsilons).map(|(s, e)| s * e * e).collect::<Vec<f64>>();
    let half_m = BrillouinGrid::new(grid.dim(), (grid.points_per_axis() / 2).max(3))?;
    report.half_grid = Some(rescale(sweep_norms(field, &spec, basis, &half_m, params)?));
    let half_basis = PlanewaveBasis::new(basis.dim(), (basis.cutoff() / 2).max(1));
    let half_spec = build_spec(&half_basis)?;
    report.half_cutoff = Some(rescale(sweep_norms(field, &half_spec, &half_basis, grid, params)?));
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct KlmnReport {
    pub q: f64,
    pub hypothesis2: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Resolvent-continuity bound for `K = H + P` with `|p[u]| ≤ a‖u‖² + b·h[u]`.
pub fn klmn_bound_check(h: &CMat, k: &CMat, a: f64, b: f64, zeta: f64) -> Result<KlmnReport> {
    let (vals, vecs) = eigh(h)?;
    if vals.iter().any(|v| (v - zeta).abs() <= NEAR_SINGULAR_TOL) {
        return Err(Error::NearSingular { z: zeta, dist: 0.0, eta: Vec::new() });
    }
    let q = vals.iter().fold(0.0_f64, |m, v| m.max(((a + b * v) / (v - zeta)).abs()));
    let r_norm = vals.iter().fold(0.0_f64, |m, v| m.max(1.0 / (v - zeta).abs()));
    let hypothesis2 = q < 1.0;
    if !hypothesis2 {
        return Ok(KlmnReport { q, hypothesis2, lhs: f64::NAN, rhs: f64::NAN, holds: false });
    }
    let rh = crate::linalg::spectral_function(&vals, &vecs, |v| 1.0 / (v - zeta));
    let n = h.nrows();
    let shifted = k - CMat::identity(n, n) * Complex64::new(zeta, 0.0);
    let rk = shifted
        .try_inverse()
        .ok_or_else(|| Error::SolverFailure("perturbed fiber is singular at zeta".into()))?;
    let lhs = norm_general(&(rk - rh))?;
    let rhs = 4.0 * q / (1.0 - q).powi(2) * r_norm;
    Ok(KlmnReport { q, hypothesis2, lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-8) })
}

#[derive(Debug, Clone, Serialize)]
pub struct KlmnTrial {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub report: KlmnReport,
}

/// KLMN check on one fiber with `H = A(η) − λ0`, `K = (A+tB)(η) − λ̃0`; `t` is halved until the hypothesis holds.
#[allow(clippy::too_many_arguments)]
pub fn klmn_fiber_trial(
    a_field: &CoefficientField,
    b_field: &PerturbationField,
    basis: &PlanewaveBasis,
    eta: &[f64],
    mut t: f64,
    lambda0: f64,
    lambda0_tilde: &dyn Fn(f64) -> Result<f64>,
    zeta: f64,
) -> Result<KlmnTrial> {
    let n = basis.len();
    let h = assemble_fiber(a_field, basis, eta).matrix - CMat::identity(n, n) * Complex64::new(lambda0, 0.0);
    for _ in 0..40 {
        let lt = lambda0_tilde(t)?;
        let kf = a_field.add_scaled(b_field, t)?;
        let k = assemble_fiber(&kf, basis, eta).matrix - CMat::identity(n, n) * Complex64::new(lt, 0.0);
        let b = t * b_field.sup_norm() / a_field.alpha();
        let a = (lt - lambda0).abs() + b * lambda0;
        let report = klmn_bound_check(&h, &k, a, b, zeta)?;
        if report.hypothesis2 {
            return Ok(KlmnTrial { t, a, b, report });
        }
        t *= 0.5;
    }
    Err(Error::InvalidParams("no step satisfies the relative-bound hypothesis".into()))
}

/// `16(1 + c3κ²) / (κ²(1 − c3κ²)²)`, infinite when `c3κ² ≥ 1`.
pub fn uniform_resolvent_bound(c3: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    if c3 * k2 >= 1.0 {
        return f64::INFINITY;
    }
    16.0 * (1.0 + c3 * k2) / (k2 * (1.0 - c3 * k2).powi(2))
}

/// Data of a doubly degenerate edge to be split by `A + tB`.
#[derive(Debug, Clone)]
pub struct TwoBranchSetup {
    pub eta0: Vec<f64>,
    pub lambda0: f64,
    /// 1-based index of the lower band of the pair.
    pub band: usize,
    /// Half-width for refining each branch extremum.
    pub refine_half_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbedPoint {
    pub epsilon: f64,
    pub t: f64,
    pub c1: f64,
    pub c3: f64,
    pub lambda0_tilde: f64,
    pub s_vs_tilde: f64,
    pub uniform_bound: f64,
    pub tilde_vs_effective: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbedComparison {
    pub points: Vec<PerturbedPoint>,
    pub c2: f64,
    pub bound_holds: bool,
    /// Fit of `ε²·sup‖S − S̃⁰‖`.
    pub combined_fit: LogLogFit,
    /// Fit of `ε²·sup‖S̃ − S̃⁰‖`.
    pub tilde_fit: LogLogFit,
    /// `(factor, slope)` with `t` scaled by `factor`.
    pub sensitivity: Vec<(f64, f64)>,
}

fn pair_values(field: &CoefficientField, basis: &PlanewaveBasis, eta: &[f64], band: usize) -> Result<(f64, f64)> {
    let v = crate::spectrum::fiber_eigenvalues(field, basis, eta)?;
    Ok((v[band - 1], v[band]))
}

/// Edge of the perturbed pair: the lower of the two branch values at the edge point.
fn perturbed_edge(a: &CoefficientField, b: &PerturbationField, basis: &PlanewaveBasis, setup: &TwoBranchSetup, t: f64) -> Result<f64> {
    Ok(pair_values(&a.add_scaled(b, t)?, basis, &setup.eta0, setup.band)?.0)
}

/// Effective two-branch data of `A + tB` at the split edge.
pub fn two_branch_spec(
    perturbed: &CoefficientField,
    basis: &PlanewaveBasis,
    setup: &TwoBranchSetup,
) -> Result<(EffectiveResolventSpec, f64)> {
    let fiber = assemble_fiber(perturbed, basis, &setup.eta0);
    let (values, vectors) = eigh(&fiber.matrix)?;
    let lo = setup.band.saturating_sub(1).max(1);
    let hi = (setup.band + 2).min(basis.len());
    let mut branches = Vec::new();
    for j in 0..2 {
        let reference: CVec = vectors.column(setup.band - 1 + j).into_owned();
        let ev = BranchEvaluator::new(perturbed, basis, &fiber.eta, reference.clone(), lo, hi);
        let f = |e: &[f64]| ev.eval(e);
        let eta = match refine_minimizer(&f, &fiber.eta, setup.refine_half_width, REFINE_TOL) {
            Ok(e) => e,
            Err(Error::NotLocalMin(_)) => fiber.eta.clone(),
            Err(e) => return Err(e),
        };
        let hess = hessian_fd(&f, &eta, FD_STEP)?;
        let phi = if eta == fiber.eta { reference } else { crate::edge::eigenvector_at(perturbed, basis, &eta, setup.band + j)? };
        branches.push(EffectiveBranch { eta, b: hess.b_edge, phi });
    }
    Ok((EffectiveResolventSpec { branches }, values[setup.band - 1]))
}

fn coupling_step(
    a: &CoefficientField,
    b: &PerturbationField,
    basis: &PlanewaveBasis,
    setup: &TwoBranchSetup,
    eps: f64,
    kappa: f64,
    factor: f64,
) -> Result<(f64, f64)> {
    let c2 = b.sup_norm() / a.alpha();
    let mut t = a.sigma0(b) / 1000.0;
    let mut c1 = f64::NAN;
    for _ in 0..4 {
        let lt = perturbed_edge(a, b, basis, setup, t)?;
        c1 = (lt - setup.lambda0).abs() / t + c2 * setup.lambda0;
        t = eps.powi(4) * kappa * kappa / c1;
    }
    Ok((factor * t, c1))
}

fn two_branch_sweep(
    a: &CoefficientField,
    b: &PerturbationField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    setup: &TwoBranchSetup,
    params: &HomogParams,
    factor: f64,
    base: &[ExactFiber],
) -> Result<Vec<PerturbedPoint>> {
    let c2 = b.sup_norm() / a.alpha();
    let mut out = Vec::new();
    for &eps in &params.epsilons {
        let (t, c1) = coupling_step(a, b, basis, setup, eps, params.kappa, factor)?;
        let perturbed = a.add_scaled(b, t)?;
        let (spec, lt) = two_branch_spec(&perturbed, basis, setup)?;
        let e2k2 = eps * eps * params.kappa * params.kappa;
        let z = setup.lambda0 - e2k2;
        let zt = lt - e2k2;
        let per_node: Vec<Result<(f64, f64, f64)>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let s = base[i].resolvent(z)?;
                let st = ExactFiber::new(&perturbed, basis, &base[i].eta)?.resolvent(zt)?;
                let s0 = effective_resolvent_fiber(&spec, basis, &base[i].eta, eps, params.kappa);
                Ok((norm_hermitian(&(&s - &st))?, norm_hermitian(&(&st - &s0))?, norm_hermitian(&(&s - &s0))?))
            })
            .collect();
        let mut m = (0.0_f64, 0.0_f64, 0.0_f64);
        for r in per_node {
            let (x, y, w) = r?;
            m = (m.0.max(x), m.1.max(y), m.2.max(w));
        }
        let c3 = c2 / c1;
        out.push(PerturbedPoint {
            epsilon: eps,
            t,
            c1,
            c3,
            lambda0_tilde: lt,
            s_vs_tilde: m.0,
            uniform_bound: uniform_resolvent_bound(c3, params.kappa),
            tilde_vs_effective: m.1,
            combined: m.2,
        });
    }
    Ok(out)
}

/// Split-edge comparison with `t = ε⁴κ²/c1`, plus its sensitivity to `t × 0.5` and `t × 1.5`.
pub fn perturbed_comparison(
    a: &CoefficientField,
    b: &PerturbationField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    setup: &TwoBranchSetup,
    params: &HomogParams,
) -> Result<PerturbedComparison> {
    let base: Vec<ExactFiber> = (0..grid.len())
        .into_par_iter()
        .map(|i| ExactFiber::new(a, basis, &grid.node(i)))
        .collect::<Result<_>>()?;
    let r = |pts: &[PerturbedPoint], pick: fn(&PerturbedPoint) -> f64| {
        let eps: Vec<f64> = pts.iter().map(|p| p.epsilon).collect();
        let y: Vec<f64> = pts.iter().map(|p| pick(p) * p.epsilon * p.epsilon).collect();
        fit_loglog(&eps, &y)
    };
    let points = two_branch_sweep(a, b, basis, grid, setup, params, 1.0, &base)?;
    let mut sensitivity = Vec::new();
    for factor in [0.5, 1.5] {
        let pts = two_branch_sweep(a, b, basis, grid, setup, params, factor, &base)?;
        sensitivity.push((factor, r(&pts, |p| p.combined).slope));
    }
    Ok(PerturbedComparison {
        c2: b.sup_norm() / a.alpha(),
        bound_holds: points.iter().all(|p| p.s_vs_tilde <= p.uniform_bound),
        combined_fit: r(&points, |p| p.combined),
        tilde_fit: r(&points, |p| p.tilde_vs_effective),
        points,
        sensitivity,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionNorms {
    pub epsilon: f64,
    pub exact_outside: f64,
    pub effective_outside: f64,
    pub scaled_inside_difference: f64,
}

/// Norms of `S̃F⊥`, `S̃⁰F⊥` and `ε(S̃F − S̃⁰F)`, where `F` projects onto `bands` at nodes within
/// `radius` of a branch point and, on the effective side, onto symbol entries with `|k+η−η_j| < radius`.
#[allow(clippy::too_many_arguments)]
pub fn projection_split_norms(
    field: &CoefficientField,
    spec: &EffectiveResolventSpec,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    bands: &[usize],
    radius: f64,
    lambda0: f64,
    eps: f64,
    kappa: f64,
) -> Result<ProjectionNorms> {
    let d = basis.dim();
    let z = lambda0 - eps * eps * kappa * kappa;
    let inside = |eta: &[f64]| spec.branches.iter().any(|b| crate::planewave::periodic_distance(eta, &b.eta) < radius);
    let per_node: Vec<Result<(f64, f64, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let fiber = ExactFiber::new(field, basis, &grid.node(i))?;
            let eta = fiber.eta.clone();
            let n = basis.len();
            let s = fiber.resolvent(z)?;
            let f = if inside(&eta) { fiber.projector(bands) } else { CMat::zeros(n, n) };
            let f_perp = CMat::identity(n, n) - &f;
            let chi = |_: usize, br: &EffectiveBranch, c: usize| {
                let k = basis.index(c);
                let r2: f64 = (0..d).map(|j| (k[j] as f64 + eta[j] - br.eta[j]).powi(2)).sum();
                if r2.sqrt() < radius { 1.0 } else { 0.0 }
            };
            let s0_in = effective_with_weights(spec, basis, &eta, eps, kappa, &chi);
            let s0_out = effective_with_weights(spec, basis, &eta, eps, kappa, &|j, br, c| 1.0 - chi(j, br, c));
            Ok((
                norm_general(&(&s * &f_perp))?,
                norm_hermitian(&s0_out)?,
                eps * norm_general(&(&s * &f - s0_in))?,
            ))
        })
        .collect();
    let mut m = (0.0_f64, 0.0_f64, 0.0_f64);
    for r in per_node {
        let (a, b, c) = r?;
        m = (m.0.max(a), m.1.max(b), m.2.max(c));
    }
    Ok(ProjectionNorms { epsilon: eps, exact_outside: m.0, effective_outside: m.1, scaled_inside_difference: m.2 })
}

/// Function on a periodized box of `L^d` cells, `P = 2K+1` samples per cell and axis.
#[derive(Debug, Clone)]
pub struct BoxFunction {
    pub dim: usize,
    pub cells: usize,
    pub per_cell: usize,
    /// Row-major samples (first axis slowest).
    pub values: Vec<Complex64>,
}

impl BoxFunction {
    pub fn side(&self) -> usize {
        self.cells * self.per_cell
    }

    pub fn l2_norm_sqr(&self) -> f64 {
        let dy = 2.0 * PI / self.per_cell as f64;
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dy.powi(self.dim as i32)
    }
}

#[derive(Debug, Clone)]
pub struct BlochCoefficients {
    /// `coeffs[node][l]` for grid node `node` and band `l`.
    pub coeffs: Vec<Vec<Complex64>>,
    pub grid: BrillouinGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundtripReport {
    pub relative_error: f64,
    pub parseval_defect: f64,
    pub norm_sqr: f64,
}

fn fft_axes(values: &mut [Complex64], dim: usize, side: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
    let scale = 1.0 / (side as f64).sqrt();
    if dim == 1 {
        fft.process(values);
    } else {
        for row in values.chunks_mut(side) {
            fft.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); side];
        for c in 0..side {
            for r in 0..side {
                col[r] = values[r * side + c];
            }
            fft.process(&mut col);
            for r in 0..side {
                values[r * side + c] = col[r];
            }
        }
    }
    for v in values.iter_mut() {
        *v *= scale.powi(dim as i32);
    }
}

/// Position of frequency `n` (in units of `1/L`) within an FFT array of length `side`.
fn freq_slot(n: i64, side: usize) -> usize {
    n.rem_euclid(side as i64) as usize
}

/// `(node index along axis, k)` ↔ frequency `n = L·k + (j − L/2)`.
fn frequency(j: usize, k: i32, cells: usize) -> i64 {
    cells as i64 * k as i64 + j as i64 - (cells / 2) as i64
}

/// Planewave coefficient vectors of `g` at every `η` node of the `L`-point grid.
fn fiber_vectors(g: &BoxFunction, basis: &PlanewaveBasis) -> (BrillouinGrid, Vec<CVec>) {
    let side = g.side();
    let mut hat = g.values.clone();
    fft_axes(&mut hat, g.dim, side, false);
    let grid = BrillouinGrid::new(g.dim, g.cells).expect("valid Bloch grid");
    let m = g.cells;
    let vecs = (0..grid.len())
        .map(|node| {
            let js = if g.dim == 1 { [node, 0] } else { [node / m, node % m] };
            CVec::from_fn(basis.len(), |p, _| {
                let k = basis.index(p);
                let s0 = freq_slot(frequency(js[0], k[0], m), side);
                if g.dim == 1 {
                    hat[s0]
                } else {
                    hat[s0 * side + freq_slot(frequency(js[1], k[1], m), side)]
                }
            })
        })
        .collect();
    (grid, vecs)
}

/// Bloch coefficients `⟨v_l(η), ĝ(η)⟩` over all bands of the full basis.
pub fn bloch_transform(g: &BoxFunction, field: &CoefficientField, basis: &PlanewaveBasis) -> Result<BlochCoefficients> {
    if g.per_cell != 2 * basis.cutoff() + 1 || g.cells % 2 != 0 {
        return Err(Error::InvalidParams("box needs an even cell count and 2K+1 samples per cell".into()));
    }
    let (grid, vecs) = fiber_vectors(g, basis);
    let norm = (g.cells as f64 * 2.0 * PI / g.per_cell as f64).powf(g.dim as f64 / 2.0);
    let coeffs = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (_, v) = eigh(&assemble_fiber(field, basis, &grid.node(i)).matrix)?;
            Ok((v.adjoint() * &vecs[i]).iter().map(|c| c * norm).collect())
        })
        .collect::<Result<Vec<Vec<Complex64>>>>()?;
    Ok(BlochCoefficients { coeffs, grid })
}

/// Inverse of [`bloch_transform`].
pub fn inverse_bloch_transform(
    c: &BlochCoefficients,
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    cells: usize,
) -> Result<BoxFunction> {
    let dim = basis.dim();
    let per_cell = 2 * basis.cutoff() + 1;
    let side = cells * per_cell;
    let norm = (cells as f64 * 2.0 * PI / per_cell as f64).powf(dim as f64 / 2.0);
    let mut hat = vec![Complex64::new(0.0, 0.0); side.pow(dim as u32)];
    for i in 0..c.grid.len() {
        let (_, v) = eigh(&assemble_fiber(field, basis, &c.grid.node(i)).matrix)?;
        let u = v * CVec::from_vec(c.coeffs[i].iter().map(|x| x / norm).collect());
        let js = if dim == 1 { [i, 0] } else { [i / cells, i % cells] };
        for p in 0..basis.len() {
            let k = basis.index(p);
            let s0 = freq_slot(frequency(js[0], k[0], cells), side);
            let slot = if dim == 1 { s0 } else { s0 * side + freq_slot(frequency(js[1], k[1], cells), side) };
            hat[slot] = u[p];
        }
    }
    fft_axes(&mut hat, dim, side, true);
    Ok(BoxFunction { dim, cells, per_cell, values: hat })
}

/// Forward and inverse Bloch transform of `g`, with the Parseval identity `Σ|c|²/L^d = ‖g‖²`.
pub fn bloch_transform_roundtrip(g: &BoxFunction, field: &CoefficientField, basis: &PlanewaveBasis) -> Result<RoundtripReport> {
    let c = bloch_transform(g, field, basis)?;
    let back = inverse_bloch_transform(&c, field, basis, g.cells)?;
    let diff: f64 = g.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let total: f64 = g.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let norm_sqr = g.l2_norm_sqr();
    let coeff_sum: f64 = c.coeffs.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / (g.cells as f64).powi(g.dim as i32);
    Ok(RoundtripReport {
        relative_error: diff / total.max(f64::MIN_POSITIVE),
        parseval_defect: (coeff_sum - norm_sqr).abs() / norm_sqr.max(f64::MIN_POSITIVE),
        norm_sqr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn free_resolvent_is_diagonal() {
        let basis = PlanewaveBasis::new(1, 3);
        let s = exact_resolvent_fiber(&CoefficientField::identity(1), &basis, &[0.3], -1.0, 0.0, 1.0).unwrap();
        for p in 0..basis.len() {
            let k = basis.index(p)[0] as f64;
            assert!((s[(p, p)].re - 1.0 / ((k + 0.3).powi(2) + 1.0)).abs() < 1e-14);
        }
        let err = exact_resolvent_fiber(&CoefficientField::identity(1), &basis, &[0.3], 0.09, 0.0, 1.0);
        assert!(matches!(err, Err(Error::NearSingular { .. })));
    }

    #[test]
    fn constant_mode_branch_gives_free_symbol() {
        let basis = PlanewaveBasis::new(1, 3);
        let mut phi = CVec::zeros(basis.len());
        phi[basis.position([0, 0]).unwrap()] = Complex64::new(1.0, 0.0);
        let br = EffectiveBranch { eta: vec![0.0], b: DMatrix::identity(1, 1), phi };
        let spec = EffectiveResolventSpec { branches: vec![br.clone()] };
        let m = effective_resolvent_fiber(&spec, &basis, &[0.2], 0.5, 1.0);
        for p in 0..basis.len() {
            let k = basis.index(p)[0] as f64;
            assert!((m[(p, p)].re - 1.0 / ((k + 0.2).powi(2) + 0.25)).abs() < 1e-12);
        }
        let two = EffectiveResolventSpec { branches: vec![br.clone(), br] };
        let m2 = effective_resolvent_fiber(&two, &basis, &[0.2], 0.5, 1.0);
        assert!(crate::linalg::max_abs(&(m2 - m * Complex64::new(2.0, 0.0))) < 1e-12);
    }

    #[test]
    fn params_reject_leaving_the_gap() {
        assert!(HomogParams::new(vec![0.2, 0.1], 1.0, 0.6, (0.3, 0.6)).is_ok());
        assert!(HomogParams::new(vec![0.2, 0.1], 10.0, 0.6, (0.3, 0.6)).is_err());
        assert!(HomogParams::new(vec![0.1, 0.2], 1.0, 0.6, (0.3, 0.6)).is_err());
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let x = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.3)).collect();
        let f = fit_loglog(&x, &y);
        assert!((f.slope - 1.3).abs() < 1e-12 && f.residual < 1e-12);
    }

    #[test]
    fn klmn_toy_cases() {
        let h = CMat::from_diagonal(&CVec::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)]));
        let same = klmn_bound_check(&h, &h, 0.0, 0.0, -0.5).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert!(same.holds);
        let k = &h * Complex64::new(1.1, 0.0);
        let r = klmn_bound_check(&h, &k, 0.0, 0.1, -0.5).unwrap();
        // closed form: |1/(1.1+0.5) − 1/(1+0.5)| vs |1/(2.2+0.5) − 1/(2+0.5)|
        let exact = (1.0 / 1.6 - 1.0 / 1.5_f64).abs().max((1.0 / 2.7 - 1.0 / 2.5_f64).abs());
        assert!((r.lhs - exact).abs() < 1e-14);
        assert!(r.hypothesis2 && r.holds);
    }

    #[test]
    fn free_roundtrip_and_parseval() {
        let basis = PlanewaveBasis::new(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = BoxFunction {
            dim: 1,
            cells: 8,
            per_cell: 7,
            values: (0..56).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        };
        let r = bloch_transform_roundtrip(&g, &CoefficientField::identity(1), &basis).unwrap();
        assert!(r.relative_error < 1e-12, "{r:?}");
        assert!(r.parseval_defect < 1e-12, "{r:?}");
    }
}
