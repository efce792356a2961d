//! Local models at spectral edges: refinement, finite-difference Hessians,
//! cubic residuals and the bottom-of-spectrum homogenized matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, Coefficients};
use crate::linalg::{eigh, real_eigvals_sym, CVec};
use crate::planewave::{assemble_fiber, reduce_eta, PlanewaveBasis};

pub const REFINE_TOL: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-3;
pub const NONDEGENERACY_MARGIN: f64 = 1e-8;
const GOLDEN: f64 = 0.618_033_988_749_894_8;
const MAX_SWEEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Min,
    Max,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Min => 1.0,
            Side::Max => -1.0,
        }
    }
}

/// `η ↦ λ_band(η)` with sorted eigenvalues.
pub fn band_evaluator<'a, F: Coefficients + ?Sized>(
    field: &'a F,
    basis: &'a PlanewaveBasis,
    band: usize,
) -> impl Fn(&[f64]) -> Result<f64> + 'a {
    move |eta: &[f64]| Ok(crate::linalg::eigvalsh(&assemble_fiber(field, basis, eta).matrix)?[band - 1])
}

/// Coefficient vector expressed in the frame of `eta − shift` (integer `shift`).
pub fn shift_coefficients(v: &CVec, basis: &PlanewaveBasis, shift: [i32; 2]) -> CVec {
    let mut out = CVec::zeros(v.len());
    for p in 0..basis.len() {
        let k = basis.index(p);
        if let Some(q) = basis.position([k[0] - shift[0], k[1] - shift[1]]) {
            out[p] = v[q];
        }
    }
    out
}

/// Analytic branch through a cluster member: at each `η` picks the eigenvalue
/// among bands `lo..=hi` whose eigenvector overlaps most with a reference vector.
pub struct BranchEvaluator<'a, F: Coefficients + ?Sized> {
    field: &'a F,
    basis: &'a PlanewaveBasis,
    reference: CVec,
    anchor: Vec<f64>,
    lo: usize,
    hi: usize,
}

impl<'a, F: Coefficients + ?Sized> BranchEvaluator<'a, F> {
    /// `reference` is given in the frame of the unreduced `anchor`; `lo`, `hi` are 1-based.
    pub fn new(field: &'a F, basis: &'a PlanewaveBasis, anchor: &[f64], reference: CVec, lo: usize, hi: usize) -> Self {
        Self { field, basis, reference, anchor: anchor.to_vec(), lo: lo.max(1), hi: hi.min(basis.len()) }
    }

    pub fn eval(&self, eta: &[f64]) -> Result<f64> {
        Ok(self.eval_with_overlap(eta)?.0)
    }

    pub fn eval_with_overlap(&self, eta: &[f64]) -> Result<(f64, f64)> {
        // express η in the anchor's frame before reduction
        let near: Vec<f64> = eta.iter().zip(&self.anchor).map(|(e, a)| a + (e - a - (e - a).round())).collect();
        let fiber = assemble_fiber(self.field, self.basis, &near);
        let mut shift = [0i32; 2];
        for (j, (r, n)) in fiber.eta.iter().zip(&near).enumerate() {
            shift[j] = (n - r).round() as i32;
        }
        let reference = shift_coefficients(&self.reference, self.basis, shift);
        let (values, vectors) = eigh(&fiber.matrix)?;
        let mut best = (f64::NAN, -1.0);
        for n in self.lo..=self.hi {
            let ov = vectors.column(n - 1).dotc(&reference).norm();
            if ov > best.1 {
                best = (values[n - 1], ov);
            }
        }
        Ok(best)
    }
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Coordinate golden-section inside `guess ± half_width`, then a quadratic polish.
/// The result is reduced to `Y′`.
pub fn refine_minimizer(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    guess: &[f64],
    half_width: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let d = guess.len();
    let mut x = guess.to_vec();
    let mut fx = f(&x)?;
    for _ in 0..MAX_SWEEPS {
        let mut moved = 0.0_f64;
        for j in 0..d {
            let line = |s: f64| {
                let mut y = x.clone();
                y[j] = s;
                f(&y)
            };
            let (s, fs) = golden_section(&line, guess[j] - half_width, guess[j] + half_width, tol)?;
            if fs <= fx {
                moved = moved.max((s - x[j]).abs());
                x[j] = s;
                fx = fs;
            }
        }
        if moved < tol {
            break;
        }
    }
    let s = (half_width * 1e-2).max(1e-5);
    for j in 0..d {
        let at = |off: f64| {
            let mut y = x.clone();
            y[j] += off;
            f(&y)
        };
        let (fm, fp) = (at(-s)?, at(s)?);
        let curv = fm - 2.0 * fx + fp;
        if curv > 0.0 {
            let delta = 0.5 * s * (fm - fp) / curv;
            if delta.abs() < s {
                let fnew = at(delta)?;
                if fnew <= fx {
                    x[j] += delta;
                    fx = fnew;
                }
            }
        }
    }
    let edge = half_width - 2.0 * tol;
    if x.iter().zip(guess).any(|(a, g)| (a - g).abs() >= edge) {
        return Err(Error::NotLocalMin(x));
    }
    Ok(reduce_eta(&x).0)
}

fn second_differences(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let f0 = f(x)?;
    let at = |steps: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, s) in steps {
            y[i] += s;
        }
        f(&y)
    };
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = (at(&[(i, h)])? - 2.0 * f0 + at(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])?
                + at(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct HessianEstimate {
    /// Half the second-derivative matrix (Richardson-extrapolated).
    pub b_edge: DMatrix<f64>,
    pub b_h: DMatrix<f64>,
    pub b_half: DMatrix<f64>,
    pub error: f64,
}

fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `B_edge = ½·∇²λ` at `x` from steps `h` and `h/2`.
pub fn hessian_fd(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<HessianEstimate> {
    let b_h = second_differences(f, x, h)? * 0.5;
    let b_half = second_differences(f, x, h / 2.0)? * 0.5;
    let b_edge = (&b_half * 4.0 - &b_h) / 3.0;
    let diff = max_abs_entry(&(&b_h - &b_half));
    let norm = max_abs_entry(&b_edge);
    let error = diff * 4.0 / 3.0 + 1e-12 * (1.0 + norm);
    if error > 0.1 * norm {
        return Err(Error::StepUnstable { error, norm });
    }
    Ok(HessianEstimate { b_edge, b_h, b_half, error })
}

/// True iff the smallest eigenvalue exceeds `margin`.
pub fn nondegeneracy_check(b: &DMatrix<f64>, margin: f64) -> (bool, f64) {
    let min = real_eigvals_sym(b)[0];
    (min > margin, min)
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeModel {
    pub eta: Vec<f64>,
    pub lambda0: f64,
    pub band: usize,
    pub side: Side,
    /// Quadratic form of `side.sign()·(λ − λ0)`.
    pub b_edge: DMatrix<f64>,
    pub hessian_error: f64,
    pub min_eig: f64,
    pub nondegenerate: bool,
    pub c3: f64,
    pub probe_radius: f64,
}

/// Quasi-random probes in the annulus `r/2 ≤ |η − η*| ≤ r` (additive recurrences).
pub fn annulus_probes(dim: usize, r: f64, n: usize) -> Vec<Vec<f64>> {
    let g1 = 0.618_033_988_749_894_8;
    let g2 = 0.754_877_666_246_692_7;
    let g3 = 0.569_840_290_998_053_3;
    (1..=n)
        .map(|i| {
            let i = i as f64;
            let rad = r * (0.5 + 0.5 * (i * g1).fract());
            match dim {
                1 => vec![if (i * g2).fract() < 0.5 { -rad } else { rad }],
                _ => {
                    let th = std::f64::consts::TAU * (i * g3).fract();
                    vec![rad * th.cos(), rad * th.sin()]
                }
            }
        })
        .collect()
}

/// `max |s·(λ(η) − λ0) − (η−η*)ᵀB(η−η*)| / |η−η*|³` over annulus probes.
pub fn quadratic_residual(f: &dyn Fn(&[f64]) -> Result<f64>, model: &EdgeModel, r: f64, n_probe: usize) -> Result<f64> {
    let d = model.eta.len();
    let s = model.side.sign();
    let mut c3 = 0.0_f64;
    for p in annulus_probes(d, r, n_probe) {
        let eta: Vec<f64> = model.eta.iter().zip(&p).map(|(a, b)| a + b).collect();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += p[i] * model.b_edge[(i, j)] * p[j];
            }
        }
        let dist = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let resid = (s * (f(&eta)? - model.lambda0) - q).abs();
        c3 = c3.max(resid / dist.powi(3));
    }
    Ok(c3)
}

/// Refine, fit the Hessian and probe the cubic residual at one extremizer.
pub fn fit_edge_model(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    guess: &[f64],
    half_width: f64,
    band: usize,
    side: Side,
    probe_radius: f64,
) -> Result<EdgeModel> {
    let s = side.sign();
    let g = |eta: &[f64]| Ok(s * f(eta)?);
    let eta = refine_minimizer(&g, guess, half_width, REFINE_TOL)?;
    edge_model_at(f, &eta, band, side, probe_radius)
}

/// Hessian and residual at a known extremizer.
pub fn edge_model_at(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    eta: &[f64],
    band: usize,
    side: Side,
    probe_radius: f64,
) -> Result<EdgeModel> {
    let s = side.sign();
    let g = |e: &[f64]| Ok(s * f(e)?);
    let lambda0 = f(eta)?;
    let hess = hessian_fd(&g, eta, FD_STEP)?;
    let (nondegenerate, min_eig) = nondegeneracy_check(&hess.b_edge, NONDEGENERACY_MARGIN);
    let mut model = EdgeModel {
        eta: eta.to_vec(),
        lambda0,
        band,
        side,
        b_edge: hess.b_edge,
        hessian_error: hess.error,
        min_eig,
        nondegenerate,
        c3: 0.0,
        probe_radius,
    };
    model.c3 = quadratic_residual(f, &model, probe_radius, 32)?;
    Ok(model)
}

/// `A* = ½·∇²λ_1(0)`.
pub fn homogenized_matrix_bottom(field: &CoefficientField, basis: &PlanewaveBasis) -> Result<DMatrix<f64>> {
    let f = band_evaluator(field, basis, 1);
    let zero = vec![0.0; basis.dim()];
    Ok(hessian_fd(&f, &zero, FD_STEP)?.b_edge)
}

/// Lowest eigenvector at `eta` (used for branch references).
pub fn eigenvector_at<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64], band: usize) -> Result<CVec> {
    let (_, vecs) = eigh(&assemble_fiber(field, basis, eta).matrix)?;
    Ok(vecs.column(band - 1).into_owned())
}

pub fn unit(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refines_parabola() {
        let f = |x: &[f64]| Ok((x[0] - 0.013).powi(2));
        let x = refine_minimizer(&f, &[0.02], 0.05, REFINE_TOL).unwrap();
        assert!((x[0] - 0.013).abs() < 1e-8);
        let g = |x: &[f64]| Ok(x[0]);
        assert!(matches!(refine_minimizer(&g, &[0.0], 0.05, REFINE_TOL), Err(Error::NotLocalMin(_))));
    }

    #[test]
    fn refines_free_band_and_maximizer() {
        let basis = PlanewaveBasis::new(1, 4);
        let id = CoefficientField::identity(1);
        let f = band_evaluator(&id, &basis, 1);
        let x = refine_minimizer(&f, &[0.02], 0.05, REFINE_TOL).unwrap();
        assert!(x[0].abs() < 1e-8);
        let neg = |e: &[f64]| Ok(-f(e)?);
        let y = refine_minimizer(&neg, &[0.49], 0.05, REFINE_TOL).unwrap();
        assert!((y[0].abs() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn hessian_of_scaled_parabolas() {
        for a in [1.0, 2.5] {
            let f = move |x: &[f64]| Ok(a * x[0] * x[0]);
            let h = hessian_fd(&f, &[0.0], FD_STEP).unwrap();
            assert!((h.b_edge[(0, 0)] - a).abs() < 1e-8);
            assert!((h.b_h[(0, 0)] - h.b_half[(0, 0)]).abs() < h.error);
        }
        let f = |x: &[f64]| Ok(x[0] * x[0] + 0.5 * x[0] * x[1] + 3.0 * x[1] * x[1]);
        let h = hessian_fd(&f, &[0.1, -0.2], FD_STEP).unwrap();
        assert!((h.b_edge[(0, 1)] - 0.25).abs() < 1e-7);
        assert!((h.b_edge[(1, 1)] - 3.0).abs() < 1e-7);
        assert_eq!(h.b_edge[(0, 1)], h.b_edge[(1, 0)]);
    }

    #[test]
    fn nondegeneracy_examples() {
        assert_eq!(nondegeneracy_check(&DMatrix::identity(2, 2), 1e-8), (true, 1.0));
        assert!(!nondegeneracy_check(&DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.0]), 1e-8).0);
        assert!(!nondegeneracy_check(&DMatrix::from_diagonal(&nalgebra::dvector![1e-12, 1.0]), 1e-8).0);
    }

    #[test]
    fn constant_field_homogenizes_to_itself() {
        let basis = PlanewaveBasis::new(2, 2);
        let a = homogenized_matrix_bottom(&CoefficientField::constant(2, 1.7), &basis).unwrap();
        assert!((a[(0, 0)] - 1.7).abs() < 1e-7 && (a[(1, 1)] - 1.7).abs() < 1e-7 && a[(0, 1)].abs() < 1e-7);
    }

    #[test]
    fn exact_parabola_has_small_cubic_residual() {
        let f = |x: &[f64]| Ok(2.0 * x[0] * x[0] + 0.3);
        let m = fit_edge_model(&f, &[0.01], 0.05, 1, Side::Min, 0.01).unwrap();
        assert!(m.c3 <= 1e-6, "c3 = {}", m.c3);
        assert!(m.nondegenerate);
    }

    #[test]
    fn kink_inflates_cubic_residual() {
        let basis = PlanewaveBasis::new(1, 4);
        let id = CoefficientField::identity(1);
        let f = band_evaluator(&id, &basis, 2);
        let model = EdgeModel {
            eta: vec![-0.5],
            lambda0: 0.25,
            band: 2,
            side: Side::Min,
            b_edge: DMatrix::from_element(1, 1, 1.0),
            hessian_error: 0.0,
            min_eig: 1.0,
            nondegenerate: true,
            c3: 0.0,
            probe_radius: 0.01,
        };
        assert!(quadratic_residual(&f, &model, 0.01, 16).unwrap() > 1e3);
    }

    #[test]
    fn branch_evaluator_follows_crossing_modes() {
        let basis = PlanewaveBasis::new(1, 3);
        let id = CoefficientField::identity(1);
        // mode k = 0 has eigenvalue η² for every η; sorted band 1 switches at ±1/2
        let p = basis.position([0, 0]).unwrap();
        let mut r = CVec::zeros(basis.len());
        r[p] = unit(1.0);
        let br = BranchEvaluator::new(&id, &basis, &[0.5], r, 1, 2);
        for eta in [0.45, 0.5, 0.55] {
            assert!((br.eval(&[eta]).unwrap() - eta * eta).abs() < 1e-12);
        }
    }
}
