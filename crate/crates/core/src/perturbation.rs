//! First-order splitting of degenerate Bloch clusters: splitting matrices,
//! perturbation construction at one or several points, branch tracking in `t`,
//! a fibered global cover and the gradient-bump edge splitting.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::edge::Side;
use crate::error::{Error, Result};
use crate::field::{CoefficientField, Coefficients, PerturbationField, ScalarSeries};
use crate::linalg::{eigh, eigvalsh, CMat, CVec};
use crate::planewave::{
    assemble_fiber, function_series, gradient_vector, periodic_distance, shifted_laplacian_eigs, synthesize,
    PlanewaveBasis,
};
use crate::spectrum::{compute_bands, default_cluster_tol, fiber_eigenvalues, BrillouinGrid, Cluster};

pub const OVERLAP_THRESHOLD: f64 = 0.6;
pub const MAX_HALVINGS: usize = 8;
pub const BUDGET_FRACTION: f64 = 0.01;
pub const DEFAULT_RADIUS: f64 = 0.1;
pub const DEFAULT_RETRIES: usize = 32;
/// `t0 = min(σ₀/10, T0_CLUSTER_FACTOR·cluster_tol/spread)`.
pub const T0_CLUSTER_FACTOR: f64 = 100.0;
const NONZERO_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SplittingMatrix {
    pub eta: Vec<f64>,
    pub h: usize,
    /// `G[m][n] = u_mᴴ·H_B·u_n`.
    pub g: CMat,
    pub vectors: CMat,
}

/// Splitting matrix of `B` on the cluster spanned by the columns of `vectors`.
pub fn splitting_matrix<B: Coefficients + ?Sized>(b: &B, basis: &PlanewaveBasis, eta0: &[f64], vectors: &CMat) -> SplittingMatrix {
    let fiber = assemble_fiber(b, basis, eta0);
    let mut g = vectors.adjoint() * &fiber.matrix * vectors;
    crate::linalg::hermitize(&mut g);
    SplittingMatrix { eta: fiber.eta, h: vectors.ncols(), g, vectors: vectors.clone() }
}

/// Eigenvalues of `G`, ascending: the branch slopes at `t = 0`.
pub fn first_order_slopes(g: &SplittingMatrix) -> Vec<f64> {
    eigvalsh(&g.g).expect("finite splitting matrix")
}

pub fn spread(slopes: &[f64]) -> f64 {
    match (slopes.first(), slopes.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    pub b: PerturbationField,
    /// `+1` for `A + tB`, `−1` for `A − tB`.
    pub sign: f64,
    pub sigma0: f64,
    pub t0: f64,
    /// Largest step at which the linear splitting check was confirmed.
    pub t_lin: f64,
    pub radius: f64,
    pub targets: Vec<Vec<f64>>,
    pub spreads: Vec<f64>,
}

impl PerturbationPlan {
    pub fn zero(dim: usize) -> Self {
        Self {
            b: PerturbationField::zero(dim),
            sign: 1.0,
            sigma0: f64::INFINITY,
            t0: 0.0,
            t_lin: 0.0,
            radius: DEFAULT_RADIUS,
            targets: Vec::new(),
            spreads: Vec::new(),
        }
    }

    /// `A + sign·t·B`.
    pub fn apply(&self, a: &CoefficientField, t: f64) -> Result<CoefficientField> {
        if self.b.is_zero() {
            return Ok(a.clone());
        }
        a.add_scaled(&self.b, self.sign * t)
    }
}

fn recommended_t0(sigma0: f64, lambda0: f64, spread: f64) -> f64 {
    let cap = if spread > 0.0 { T0_CLUSTER_FACTOR * default_cluster_tol(lambda0) / spread } else { f64::INFINITY };
    (sigma0 / 10.0).min(cap)
}

/// Eigenvalues with 1-based indices `first..first+h` at `eta`.
pub fn cluster_values<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64], first: usize, h: usize) -> Result<Vec<f64>> {
    Ok(fiber_eigenvalues(field, basis, eta)?[first - 1..first - 1 + h].to_vec())
}

/// Split ascending values into runs separated by gaps larger than `tol`.
pub fn sub_clusters(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(run) if v - values[*run.last().unwrap()] <= tol => run.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn gradient_series(u: &CVec, basis: &PlanewaveBasis, eta: &[f64], j: usize) -> ScalarSeries {
    function_series(&gradient_vector(u, basis, eta, j), basis)
}

/// Nontrivial real candidates for `β`, in order of preference.
fn splitting_candidates(f1: &CVec, f2: &CVec, basis: &PlanewaveBasis, eta: &[f64], cutoff: usize) -> Vec<(usize, ScalarSeries)> {
    let mut primary = Vec::new();
    let mut fallback = Vec::new();
    for j in 0..basis.dim() {
        let d1 = gradient_series(f1, basis, eta, j);
        let d2 = gradient_series(f2, basis, eta, j);
        let g = d1.product(&d2.conj());
        for part in [g.real_part(), g.imag_part()] {
            let beta = part.truncated(cutoff);
            if beta.l2_coeff_norm() > NONZERO_TOL * (1.0 + g.l2_coeff_norm()) {
                primary.push((j, beta));
            }
        }
        let diff = d1.product(&d1.conj()).add_scaled(&d2.product(&d2.conj()), -1.0).real_part().truncated(cutoff);
        if diff.l2_coeff_norm() > NONZERO_TOL {
            fallback.push((j, diff));
        }
    }
    primary.extend(fallback);
    primary
}

/// Diagonal perturbation whose splitting matrix on `cluster` has positive spread.
pub fn construct_splitting_b(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    eta0: &[f64],
    cluster: &CMat,
    b_cutoff: usize,
) -> Result<PerturbationPlan> {
    let h = cluster.ncols();
    if h < 2 {
        return Err(Error::ClusterTooSmall(h));
    }
    let eta_r = crate::planewave::reduce_eta(eta0).0;
    let lambda0 = {
        let hc = assemble_fiber(a, basis, &eta_r).matrix;
        let g = cluster.adjoint() * hc * cluster;
        (0..h).map(|i| g[(i, i)].re).sum::<f64>() / h as f64
    };
    let f1: CVec = cluster.column(0).into_owned();
    let f2: CVec = cluster.column(1).into_owned();
    for (j, beta) in splitting_candidates(&f1, &f2, basis, &eta_r, b_cutoff) {
        let b = PerturbationField::diagonal_slot(&beta, j).normalized();
        let s = spread(&first_order_slopes(&splitting_matrix(&b, basis, &eta_r, cluster)));
        if s > NONZERO_TOL {
            let sigma0 = a.sigma0(&b);
            let t0 = recommended_t0(sigma0, lambda0, s);
            return Ok(PerturbationPlan {
                b,
                sign: 1.0,
                sigma0,
                t0,
                t_lin: t0,
                radius: DEFAULT_RADIUS,
                targets: vec![eta_r.clone()],
                spreads: vec![s],
            });
        }
    }
    Err(Error::DegenerateCluster)
}

/// Real functions `q` with `∫β·q ≠ 0` forcing a split for `B = β·I`.
fn scalar_candidates(f1: &CVec, f2: &CVec, basis: &PlanewaveBasis, eta: &[f64], cutoff: usize) -> Vec<ScalarSeries> {
    let d = basis.dim();
    let mut p = ScalarSeries::zeros(d, 2 * basis.cutoff());
    let mut diff = ScalarSeries::zeros(d, 2 * basis.cutoff());
    for l in 0..d {
        let d1 = gradient_series(f1, basis, eta, l);
        let d2 = gradient_series(f2, basis, eta, l);
        p = p.add_scaled(&d1.product(&d2.conj()), 1.0);
        diff = diff
            .add_scaled(&d1.product(&d1.conj()), 1.0)
            .add_scaled(&d2.product(&d2.conj()), -1.0);
    }
    let scale = 1.0 + p.l2_coeff_norm();
    [p.real_part(), p.imag_part(), diff.real_part()]
        .into_iter()
        .map(|q| q.truncated(cutoff))
        .filter(|q| q.l2_coeff_norm() > NONZERO_TOL * scale)
        .collect()
}

fn pairing(beta: &ScalarSeries, q: &ScalarSeries) -> f64 {
    beta.product(&q.conj()).integral().re
}

/// One scalar perturbation `B = β·I` splitting every degenerate target.
/// Targets are `(η_n, cluster vectors)`.
pub fn construct_multi_point_b(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    targets: &[(Vec<f64>, CMat)],
    b_cutoff: usize,
    seed: u64,
    max_retries: usize,
) -> Result<PerturbationPlan> {
    let d = basis.dim();
    let degenerate: Vec<(Vec<f64>, &CMat, f64)> = targets
        .iter()
        .filter(|(_, c)| c.ncols() >= 2)
        .map(|(eta, c)| {
            let eta_r = crate::planewave::reduce_eta(eta).0;
            let hc = assemble_fiber(a, basis, &eta_r).matrix;
            let g = c.adjoint() * hc * c;
            let lam = (0..c.ncols()).map(|i| g[(i, i)].re).sum::<f64>() / c.ncols() as f64;
            (eta_r, c, lam)
        })
        .collect();
    if degenerate.is_empty() {
        return Ok(PerturbationPlan::zero(d));
    }
    let mut span: Vec<ScalarSeries> = Vec::new();
    let mut designated: Vec<ScalarSeries> = Vec::new();
    for (eta, c, _) in &degenerate {
        let f1: CVec = c.column(0).into_owned();
        let f2: CVec = c.column(1).into_owned();
        let cands = scalar_candidates(&f1, &f2, basis, eta, b_cutoff);
        let first = cands.first().cloned().ok_or(Error::DegenerateCluster)?;
        designated.push(first);
        span.extend(cands);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..max_retries {
        let mut beta = ScalarSeries::zeros(d, b_cutoff);
        for q in &span {
            beta = beta.add_scaled(q, rng.random_range(-1.0..1.0));
        }
        let norm = beta.l2_coeff_norm();
        if norm == 0.0 {
            continue;
        }
        let tol = 1e-6 * norm;
        if designated.iter().any(|q| pairing(&beta, q).abs() <= tol * q.l2_coeff_norm()) {
            log::debug!("multi-point attempt {attempt}: designated pairing too small");
            continue;
        }
        let b = PerturbationField::scalar(&beta).normalized();
        let spreads: Vec<f64> = degenerate
            .iter()
            .map(|(eta, c, _)| spread(&first_order_slopes(&splitting_matrix(&b, basis, eta, c))))
            .collect();
        if spreads.iter().all(|s| *s > NONZERO_TOL) {
            let sigma0 = a.sigma0(&b);
            let t0 = degenerate
                .iter()
                .zip(&spreads)
                .map(|((_, _, lam), s)| recommended_t0(sigma0, *lam, *s))
                .fold(f64::INFINITY, f64::min);
            return Ok(PerturbationPlan {
                b,
                sign: 1.0,
                sigma0,
                t0,
                t_lin: t0,
                radius: DEFAULT_RADIUS,
                targets: degenerate.iter().map(|(e, _, _)| e.clone()).collect(),
                spreads,
            });
        }
    }
    Err(Error::RetriesExhausted(max_retries))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionStep {
    pub eta: Vec<f64>,
    pub h_before: usize,
    pub h_after: usize,
    pub t: f64,
    pub spread: f64,
    pub diameter: f64,
    pub linear_ok: bool,
}

#[derive(Debug, Clone)]
pub struct ReductionReport {
    pub steps: Vec<ReductionStep>,
    pub field: CoefficientField,
    /// `Σ t_j B_j`.
    pub total: PerturbationField,
    pub budget_used: f64,
    pub budget: f64,
    pub final_h: Vec<usize>,
    /// Number of perturbation rounds; a multi-point round can split several clusters.
    pub iterations: usize,
}

/// Cluster built from the eigenpairs with 0-based indices `idx` at `eta`.
fn cluster_from(field: &CoefficientField, basis: &PlanewaveBasis, eta: &[f64], idx: &[usize]) -> Result<Cluster> {
    let fiber = assemble_fiber(field, basis, eta);
    let (values, vectors) = eigh(&fiber.matrix)?;
    let vals: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    Ok(Cluster {
        eta: fiber.eta,
        lambda0: vals.iter().sum::<f64>() / vals.len() as f64,
        h: idx.len(),
        values: vals,
        vectors: CMat::from_fn(basis.len(), idx.len(), |r, c| vectors[(r, idx[c])]),
        first_band: idx[0] + 1,
    })
}

/// Largest run of the former cluster (0-based indices `first..first+h`) after a step.
fn largest_run(field: &CoefficientField, basis: &PlanewaveBasis, eta: &[f64], first: usize, h: usize) -> Result<(Vec<usize>, f64)> {
    let vals = fiber_eigenvalues(field, basis, eta)?;
    let window = &vals[first..first + h];
    let mean = window.iter().sum::<f64>() / h as f64;
    let runs = sub_clusters(window, default_cluster_tol(mean));
    let best = runs.iter().max_by_key(|r| r.len()).expect("nonempty window");
    Ok((best.iter().map(|i| i + first).collect(), window[h - 1] - window[0]))
}

/// Repeated single-point splitting at `eta0` until the cluster near `lambda0` is simple.
pub fn reduce_multiplicity(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    eta0: &[f64],
    lambda0: f64,
    b_cutoff: usize,
) -> Result<ReductionReport> {
    let budget = BUDGET_FRACTION * a.alpha();
    let start = crate::spectrum::multiplicity_at(a, basis, eta0, lambda0, default_cluster_tol(lambda0))?;
    let mut field = a.clone();
    let mut total = PerturbationField::zero(basis.dim());
    let mut used = 0.0;
    let mut cluster = start;
    let mut steps = Vec::new();
    let max_iter = cluster.h + 1;
    while cluster.h > 1 && steps.len() < max_iter {
        let plan = construct_splitting_b(&field, basis, &cluster.eta, &cluster.vectors, b_cutoff)?;
        let room = budget - used;
        let t = plan.t0.min(room / plan.b.sup_norm());
        if !(t > 0.0) {
            break;
        }
        let next = plan.apply(&field, t)?;
        let first = cluster.first_band - 1;
        let (run, diameter) = largest_run(&next, basis, &cluster.eta, first, cluster.h)?;
        steps.push(ReductionStep {
            eta: cluster.eta.clone(),
            h_before: cluster.h,
            h_after: run.len(),
            t,
            spread: plan.spreads[0],
            diameter,
            linear_ok: diameter >= 0.5 * plan.spreads[0] * t,
        });
        used += t * plan.b.sup_norm();
        total = total.add_scaled(&plan.b, t);
        field = next;
        cluster = cluster_from(&field, basis, &cluster.eta, &run)?;
    }
    let iterations = steps.len();
    Ok(ReductionReport { final_h: vec![cluster.h], steps, field, total, budget_used: used, budget, iterations })
}

/// Iterated scalar perturbations splitting every listed `(η_n, λ_n)` cluster.
pub fn reduce_multi_point(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    targets: &[(Vec<f64>, f64)],
    b_cutoff: usize,
    seed: u64,
) -> Result<ReductionReport> {
    let budget = BUDGET_FRACTION * a.alpha();
    let mut clusters: Vec<Cluster> = targets
        .iter()
        .map(|(eta, lam)| crate::spectrum::multiplicity_at(a, basis, eta, *lam, default_cluster_tol(*lam)))
        .collect::<Result<_>>()?;
    let mut field = a.clone();
    let mut total = PerturbationField::zero(basis.dim());
    let mut used = 0.0;
    let mut steps = Vec::new();
    let max_iter = clusters.iter().map(|c| c.h).max().unwrap_or(1) + 1;
    let mut iter = 0;
    while clusters.iter().any(|c| c.h > 1) && iter < max_iter {
        let input: Vec<(Vec<f64>, CMat)> = clusters.iter().map(|c| (c.eta.clone(), c.vectors.clone())).collect();
        let plan = construct_multi_point_b(&field, basis, &input, b_cutoff, seed.wrapping_add(iter as u64), DEFAULT_RETRIES)?;
        let t = plan.t0.min((budget - used) / plan.b.sup_norm());
        if !(t > 0.0) {
            break;
        }
        let next = plan.apply(&field, t)?;
        let mut si = 0;
        for c in clusters.iter_mut() {
            if c.h < 2 {
                continue;
            }
            let (run, diameter) = largest_run(&next, basis, &c.eta, c.first_band - 1, c.h)?;
            steps.push(ReductionStep {
                eta: c.eta.clone(),
                h_before: c.h,
                h_after: run.len(),
                t,
                spread: plan.spreads[si],
                diameter,
                linear_ok: diameter >= 0.5 * plan.spreads[si] * t,
            });
            si += 1;
            *c = cluster_from(&next, basis, &c.eta, &run)?;
        }
        used += t * plan.b.sup_norm();
        total = total.add_scaled(&plan.b, t);
        field = next;
        iter += 1;
    }
    Ok(ReductionReport {
        final_h: clusters.iter().map(|c| c.h).collect(),
        steps,
        field,
        total,
        budget_used: used,
        budget,
        iterations: iter,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RellichBranch {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    /// Overlap with the previous node's vector (1 at the starting node).
    pub overlaps: Vec<f64>,
}

struct TrackState {
    t: f64,
    vectors: CMat,
}

fn window_pairs(field: &CoefficientField, basis: &PlanewaveBasis, eta: &[f64], lo: f64, hi: f64) -> Result<(Vec<f64>, CMat)> {
    let (values, vectors) = eigh(&assemble_fiber(field, basis, eta).matrix)?;
    let idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= lo && values[i] <= hi).collect();
    Ok((idx.iter().map(|&i| values[i]).collect(), CMat::from_fn(basis.len(), idx.len(), |r, c| vectors[(r, idx[c])])))
}

/// Assign each previous vector to the new column of maximal overlap.
fn match_columns(prev: &CMat, next: &CMat) -> Option<(Vec<usize>, Vec<f64>)> {
    let ov = prev.adjoint() * next;
    let h = prev.ncols();
    let mut assign = vec![usize::MAX; h];
    let mut best = vec![0.0; h];
    for i in 0..h {
        for j in 0..h {
            let v = ov[(i, j)].norm();
            if v > best[i] {
                best[i] = v;
                assign[i] = j;
            }
        }
    }
    let mut seen = vec![false; h];
    for (&j, &b) in assign.iter().zip(&best) {
        if b < OVERLAP_THRESHOLD || seen[j] {
            return None;
        }
        seen[j] = true;
    }
    Some((assign, best))
}

/// Continue the cluster isolated by `[lo, hi]` at `t = 0` along `A + t·B`.
pub fn track_branches(
    a: &CoefficientField,
    b: &PerturbationField,
    basis: &PlanewaveBasis,
    eta0: &[f64],
    t_grid: &[f64],
    window: (f64, f64),
) -> Result<Vec<RellichBranch>> {
    let (lo, hi) = window;
    let (vals0, vecs0) = window_pairs(a, basis, eta0, lo, hi)?;
    let h = vals0.len();
    if h == 0 {
        return Err(Error::EmptyCluster { lambda0: 0.5 * (lo + hi), tol: 0.5 * (hi - lo) });
    }
    // start from the basis diagonalizing the splitting matrix
    let g = splitting_matrix(b, basis, eta0, &vecs0);
    let (_, w) = eigh(&g.g)?;
    let start = &vecs0 * w;
    let mut ts: Vec<f64> = t_grid.to_vec();
    if !ts.iter().any(|t| *t == 0.0) {
        ts.push(0.0);
    }
    ts.sort_by(f64::total_cmp);
    let zero = ts.iter().position(|t| *t == 0.0).unwrap();
    let mut values = vec![vec![f64::NAN; ts.len()]; h];
    let mut overlaps = vec![vec![1.0; ts.len()]; h];
    let h0 = assemble_fiber(a, basis, eta0).matrix;
    for r in 0..h {
        let c = start.column(r);
        values[r][zero] = (c.adjoint() * &h0 * c)[(0, 0)].re;
    }
    for dir in [1i64, -1] {
        let mut state = TrackState { t: 0.0, vectors: start.clone() };
        let mut i = zero as i64 + dir;
        while i >= 0 && (i as usize) < ts.len() {
            let target = ts[i as usize];
            let mut step = target - state.t;
            let mut halvings = 0;
            loop {
                let t = state.t + step;
                let field = a.add_scaled(b, t)?;
                let (vals, vecs) = window_pairs(&field, basis, eta0, lo, hi)?;
                if vals.len() != h {
                    let (all, _) = window_pairs(&field, basis, eta0, f64::NEG_INFINITY, f64::INFINITY)?;
                    let intruder = all
                        .iter()
                        .copied()
                        .filter(|v| *v >= lo && *v <= hi)
                        .find(|v| !vals.contains(v))
                        .unwrap_or(if vals.len() > h { vals[0] } else { f64::NAN });
                    return Err(Error::WindowBreach { t, value: intruder });
                }
                match match_columns(&state.vectors, &vecs) {
                    Some((assign, best)) => {
                        let mut ordered = CMat::zeros(basis.len(), h);
                        for k in 0..h {
                            ordered.set_column(k, &vecs.column(assign[k]));
                        }
                        state = TrackState { t, vectors: ordered };
                        if t == target {
                            for k in 0..h {
                                values[k][i as usize] = vals[assign[k]];
                                overlaps[k][i as usize] = best[k];
                            }
                            break;
                        }
                        step = target - state.t;
                    }
                    None => {
                        halvings += 1;
                        if halvings > MAX_HALVINGS {
                            let ov = (state.vectors.adjoint() * &vecs).iter().fold(0.0_f64, |m, v| m.max(v.norm()));
                            return Err(Error::BranchCollision { t, overlap: ov });
                        }
                        step *= 0.5;
                    }
                }
            }
            i += dir;
        }
    }
    Ok((0..h)
        .map(|r| RellichBranch {
            t: ts.clone(),
            slope: stencil_slope(&ts, &values[r], zero),
            values: values[r].clone(),
            overlaps: overlaps[r].clone(),
        })
        .collect())
}

/// Five-point derivative at `ts[zero] = 0` on a symmetric uniform stencil, else central or one-sided.
fn stencil_slope(ts: &[f64], v: &[f64], zero: usize) -> f64 {
    let n = ts.len();
    let has = |k: usize| zero >= k && zero + k < n;
    if has(2) {
        let h = ts[zero + 1];
        let sym = (ts[zero - 1] + h).abs() < 1e-14 * h.abs().max(1e-300)
            && (ts[zero + 2] - 2.0 * h).abs() < 1e-12 * h
            && (ts[zero - 2] + 2.0 * h).abs() < 1e-12 * h;
        if sym {
            return (-v[zero + 2] + 8.0 * v[zero + 1] - 8.0 * v[zero - 1] + v[zero - 2]) / (12.0 * h);
        }
    }
    if has(1) {
        return (v[zero + 1] - v[zero - 1]) / (ts[zero + 1] - ts[zero - 1]);
    }
    if zero + 1 < n {
        return (v[zero + 1] - v[zero]) / ts[zero + 1];
    }
    (v[zero] - v[zero - 1]) / (-ts[zero - 1])
}

#[derive(Debug, Clone, Serialize)]
pub struct ContainmentEntry {
    pub t: f64,
    pub lambda0: f64,
    pub minimizers: Vec<Vec<f64>>,
    pub escaping: Vec<Vec<f64>>,
    pub edge_shift: f64,
    pub shift_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContainmentReport {
    pub entries: Vec<ContainmentEntry>,
    pub contained: bool,
    pub shift_bound_holds: bool,
}

fn grid_extremizers(values: &[f64], grid: &BrillouinGrid, side: Side, tol: f64) -> Vec<usize> {
    let s = side.sign();
    let best = values.iter().map(|v| s * v).fold(f64::INFINITY, f64::min);
    (0..grid.len())
        .filter(|&i| s * values[i] <= best + tol)
        .filter(|&i| grid.neighbors(i).iter().all(|&j| s * values[i] <= s * values[j]))
        .collect()
}

/// Where the perturbed band-`band` edge is attained, compared with `edge_points`.
#[allow(clippy::too_many_arguments)]
pub fn edge_containment_check(
    a: &CoefficientField,
    plan: &PerturbationPlan,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    band: usize,
    side: Side,
    t_list: &[f64],
    edge_points: &[Vec<f64>],
    delta: f64,
) -> Result<ContainmentReport> {
    let s = side.sign();
    let base = compute_bands(a, basis, grid, band, false)?.band(band);
    let lambda_base = base.iter().map(|v| s * v).fold(f64::INFINITY, f64::min) * s;
    let c_max = (0..grid.len())
        .map(|i| shifted_laplacian_eigs(basis, &grid.node(i), band)[band - 1])
        .fold(0.0_f64, f64::max);
    let mut entries = Vec::new();
    for &t in t_list {
        let field = plan.apply(a, t)?;
        let vals = compute_bands(&field, basis, grid, band, false)?.band(band);
        let lambda0 = vals.iter().map(|v| s * v).fold(f64::INFINITY, f64::min) * s;
        let mins = grid_extremizers(&vals, grid, side, default_cluster_tol(lambda0));
        let minimizers: Vec<Vec<f64>> = mins.iter().map(|&i| grid.node(i)).collect();
        let escaping = minimizers
            .iter()
            .filter(|m| edge_points.iter().all(|e| periodic_distance(m, e) > delta))
            .cloned()
            .collect();
        entries.push(ContainmentEntry {
            t,
            lambda0,
            minimizers,
            escaping,
            edge_shift: (lambda0 - lambda_base).abs(),
            shift_bound: basis.dim() as f64 * c_max * plan.b.sup_norm() * t.abs(),
        });
    }
    let contained = entries.iter().all(|e| e.escaping.is_empty());
    let shift_bound_holds = entries.iter().all(|e| e.edge_shift <= e.shift_bound + 1e-10);
    Ok(ContainmentReport { entries, contained, shift_bound_holds })
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub nodes: Vec<usize>,
    /// Applied as `A + b` (already scaled).
    pub b: PerturbationField,
}

#[derive(Debug, Clone)]
pub struct GlobalPlan {
    pub band: usize,
    pub cells: Vec<Cell>,
    /// Gap of band `band` to its neighbours at each node under its cell's perturbation.
    pub node_gaps: Vec<f64>,
    pub certified: bool,
}

/// Distance from band `band` to bands `band ± 1` at `eta`.
pub fn band_isolation<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64], band: usize) -> Result<(f64, f64)> {
    let v = fiber_eigenvalues(field, basis, eta)?;
    let lam = v[band - 1];
    let below = if band > 1 { lam - v[band - 2] } else { f64::INFINITY };
    let above = v[band] - lam;
    Ok((below.min(above), lam))
}

fn simple_at<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64], band: usize) -> Result<(bool, f64)> {
    let (gap, lam) = band_isolation(field, basis, eta, band)?;
    Ok((gap > default_cluster_tol(lam), gap))
}

fn grow(grid: &BrillouinGrid, seed: usize, allowed: &dyn Fn(usize) -> bool, owner: &mut [Option<usize>], id: usize) -> Vec<usize> {
    let mut out = vec![seed];
    owner[seed] = Some(id);
    let mut queue = VecDeque::from([seed]);
    while let Some(i) = queue.pop_front() {
        for j in grid.neighbors(i) {
            if owner[j].is_none() && allowed(j) {
                owner[j] = Some(id);
                out.push(j);
                queue.push_back(j);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Cover the grid by cells carrying perturbations that make band `band` simple at every node.
pub fn fibered_global_perturbation(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    band: usize,
    b_cutoff: usize,
) -> Result<GlobalPlan> {
    let n = grid.len();
    let base: Vec<(bool, f64)> = (0..n).map(|i| simple_at(a, basis, &grid.node(i), band)).collect::<Result<_>>()?;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut cells: Vec<Cell> = Vec::new();
    let mut node_gaps = vec![0.0; n];
    for i in 0..n {
        if owner[i].is_none() && base[i].0 {
            let nodes = grow(grid, i, &|j| base[j].0, &mut owner, cells.len());
            for &j in &nodes {
                node_gaps[j] = base[j].1;
            }
            cells.push(Cell { nodes, b: PerturbationField::zero(basis.dim()) });
        }
    }
    for i in 0..n {
        if owner[i].is_some() {
            continue;
        }
        let eta = grid.node(i);
        let lam = fiber_eigenvalues(a, basis, &eta)?[band - 1];
        let report = reduce_multiplicity(a, basis, &eta, lam, b_cutoff).map_err(|e| {
            log::debug!("node {i}: {e}");
            Error::CoverFailure(i)
        })?;
        let field = report.field;
        if !simple_at(&field, basis, &eta, band)?.0 {
            return Err(Error::CoverFailure(i));
        }
        let perturbed: Vec<Option<(bool, f64)>> = (0..n)
            .map(|j| if owner[j].is_none() { simple_at(&field, basis, &grid.node(j), band).ok() } else { None })
            .collect();
        let nodes = grow(grid, i, &|j| matches!(perturbed[j], Some((true, _))), &mut owner, cells.len());
        for &j in &nodes {
            node_gaps[j] = perturbed[j].map_or(0.0, |p| p.1);
        }
        cells.push(Cell { nodes, b: report.total });
    }
    let certified = cells.iter().all(|c| {
            let field = if c.b.is_zero() { Ok(a.clone()) } else { a.add_scaled(&c.b, 1.0) };
            field.and_then(|f| {
                c.nodes
                    .iter()
                    .map(|&j| simple_at(&f, basis, &grid.node(j), band).map(|s| s.0))
                    .collect::<Result<Vec<bool>>>()
            })
            .map(|v| v.iter().all(|x| *x))
            .unwrap_or(false)
        });
    Ok(GlobalPlan { band, cells, node_gaps, certified })
}

#[derive(Debug, Clone, Serialize)]
pub struct BumpCheck {
    pub t: f64,
    pub lambda_m: f64,
    pub bound_m: f64,
    pub min_next: f64,
    pub bound_next: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct BumpPlan {
    pub plan: PerturbationPlan,
    pub y0: Vec<f64>,
    pub direction: usize,
    pub theta: f64,
    pub eps0: f64,
    pub power: usize,
    pub mass_fraction: f64,
    pub bump: ScalarSeries,
    pub checks: Vec<BumpCheck>,
    pub verified: bool,
}

/// Fourier coefficients of `((1 + cos(x − x0))/2)^p / ∫`, i.e. unit integral on `[0, 2π)`.
pub fn raised_cosine_coeffs(p: usize, x0: f64) -> Vec<(i32, Complex64)> {
    let mut w = vec![0.0; p + 1];
    w[0] = (1..=p).map(|i| (2 * i - 1) as f64 / (2 * i) as f64).product();
    for k in 0..p {
        w[k + 1] = w[k] * (p - k) as f64 / (p + k + 1) as f64;
    }
    let norm = 2.0 * PI * w[0];
    let mut out = Vec::with_capacity(2 * p + 1);
    for k in -(p as i32)..=(p as i32) {
        let c = w[k.unsigned_abs() as usize] / norm;
        out.push((k, Complex64::from_polar(c, -(k as f64) * x0)));
    }
    out
}

/// Share of the raised-cosine mass within `|x| ≤ r`.
pub fn raised_cosine_mass(p: usize, r: f64) -> f64 {
    let n = 4096;
    let f = |x: f64| ((1.0 + x.cos()) / 2.0).powi(p as i32);
    let simpson = |a: f64, b: f64| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    simpson(-r.min(PI), r.min(PI)) / simpson(-PI, PI)
}

fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Split a doubly degenerate edge at `eta_hat` with a localized nonnegative bump, sign `A − tB`.
pub fn edge_split_w1inf(
    a: &CoefficientField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    eta_hat: &[f64],
    lambda0: f64,
    bump_cutoff: usize,
) -> Result<BumpPlan> {
    let d = basis.dim();
    let cluster = crate::spectrum::multiplicity_at(a, basis, eta_hat, lambda0, default_cluster_tol(lambda0))?;
    if cluster.h != 2 {
        return Err(Error::InvalidParams(format!("edge multiplicity {} is not 2", cluster.h)));
    }
    let eta = cluster.eta.clone();
    let m = cluster.first_band;
    let grads: Vec<Vec<CVec>> = (0..2)
        .map(|r| {
            let u: CVec = cluster.vectors.column(r).into_owned();
            (0..d).map(|l| gradient_vector(&u, basis, &eta, l)).collect()
        })
        .collect();
    let per_axis = if d == 1 { (8 * basis.cutoff()).max(64) } else { (4 * basis.cutoff()).max(32) };
    let scan = crate::field::sample_points(d, per_axis);
    let values: Vec<Vec<[Complex64; 2]>> = scan
        .iter()
        .map(|y| (0..d).map(|l| [synthesize(&grads[0][l], basis, y), synthesize(&grads[1][l], basis, y)]).collect())
        .collect();
    let mut best = (0usize, 0usize, 0.0f64);
    for (i, row) in values.iter().enumerate() {
        for (l, g) in row.iter().enumerate() {
            let th = g[0].norm_sqr() + g[1].norm_sqr();
            if th > best.2 * (1.0 + 1e-12) {
                best = (i, l, th);
            }
        }
    }
    let (i0, l, theta) = best;
    if !(theta > 1e-10) {
        return Err(Error::NoBumpSite);
    }
    let y0 = scan[i0].clone();
    let g0 = values[i0][l];
    let gnorm = theta.sqrt();
    let c = [g0[0].conj() / gnorm, g0[1].conj() / gnorm];
    let grad_phi2 = |row: &Vec<[Complex64; 2]>| (c[0] * row[l][0] + c[1] * row[l][1]).norm_sqr();
    let spacing = 2.0 * PI / per_axis as f64;
    let mut eps0 = 0.0;
    let mut r = spacing;
    while r <= PI {
        let ok = scan
            .iter()
            .zip(&values)
            .filter(|(y, _)| torus_distance(y, &y0) <= r)
            .all(|(_, row)| grad_phi2(row) > 2.0 * theta / 3.0);
        if !ok {
            break;
        }
        eps0 = r;
        r += spacing;
    }
    let radius = eps0.max(spacing);
    let mass_of = |p: usize| raised_cosine_mass(p, radius).powi(d as i32);
    let power = (1..=bump_cutoff.max(1)).find(|&p| mass_of(p) >= 0.9).unwrap_or(bump_cutoff.max(1));
    let mass_fraction = mass_of(power);
    let bump = {
        let axis: Vec<Vec<(i32, Complex64)>> = (0..d).map(|j| raised_cosine_coeffs(power, y0[j])).collect();
        let mut s = ScalarSeries::zeros(d, power);
        if d == 1 {
            for (k, v) in &axis[0] {
                s.set([*k, 0], *v);
            }
        } else {
            for (k1, v1) in &axis[0] {
                for (k2, v2) in &axis[1] {
                    s.set([*k1, *k2], v1 * v2);
                }
            }
        }
        s
    };
    let b = PerturbationField::diagonal_slot(&bump, l);
    let sigma0 = a.sigma0(&b);
    let t_hi = sigma0 / 100.0;
    let mut checks = Vec::new();
    for j in 0..=4 {
        let t = t_hi * 10f64.powf(-(j as f64) / 4.0);
        let field = a.add_scaled(&b, -t)?;
        let lambda_m = fiber_eigenvalues(&field, basis, &eta)?[m - 1];
        let bands = compute_bands(&field, basis, grid, m + 1, false)?;
        let min_next = bands.sigma_minus[m];
        let bound_m = lambda0 - 7.0 * theta * t / 12.0;
        let bound_next = lambda0 - 5.0 * theta * t / 12.0;
        checks.push(BumpCheck { t, lambda_m, bound_m, min_next, bound_next, ok: lambda_m < bound_m && min_next > bound_next });
    }
    let verified = checks.iter().all(|c| c.ok);
    let plan = PerturbationPlan {
        b,
        sign: -1.0,
        sigma0,
        t0: t_hi,
        t_lin: t_hi,
        radius: DEFAULT_RADIUS,
        targets: vec![eta],
        spreads: Vec::new(),
    };
    Ok(BumpPlan { plan, y0, direction: l, theta, eps0, power, mass_fraction, bump, checks, verified })
}
