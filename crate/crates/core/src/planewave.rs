//! Planewave Galerkin discretization of the shifted fiber operators
//! `A(η) = −(∇+iη)·A(∇+iη)` on `L²_♯(Y)`.
//!
//! Basis functions are `e^{ik·y}/(2π)^{d/2}` with `|k|∞ ≤ K` in lexicographic
//! order. Smooth coefficients enter by exact Fourier convolution; laminate
//! profiles use the inverse rule `D·T(1/a)⁻¹·D`, which converges at the rate of
//! the smooth case for piecewise-constant 1D media.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::field::{Coefficients, FourierSeries, ScalarSeries};
use crate::lattice::{sub, Index, LatticeBox};
use crate::linalg::{czero, hermitize, CMat, CVec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanewaveBasis {
    lattice: LatticeBox,
}

impl PlanewaveBasis {
    pub fn new(dim: usize, cutoff: usize) -> Self {
        Self { lattice: LatticeBox::new(dim, cutoff) }
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn cutoff(&self) -> usize {
        self.lattice.cutoff()
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, p: usize) -> Index {
        self.lattice.index(p)
    }

    pub fn position(&self, k: Index) -> Option<usize> {
        self.lattice.position(k)
    }

    pub fn indices(&self) -> impl Iterator<Item = Index> + '_ {
        self.lattice.indices()
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    /// `k + η` as a `d`-vector.
    pub fn shifted(&self, p: usize, eta: &[f64]) -> [f64; 2] {
        let k = self.index(p);
        let mut out = [0.0; 2];
        for j in 0..self.dim() {
            out[j] = k[j] as f64 + eta[j];
        }
        out
    }
}

/// Reduce `η` into `Y′ = [−1/2, 1/2)^d`; reports whether anything changed.
pub fn reduce_eta(eta: &[f64]) -> (Vec<f64>, bool) {
    let mut changed = false;
    let out = eta
        .iter()
        .map(|&e| {
            if (-0.5..0.5).contains(&e) {
                e
            } else {
                changed = true;
                e - (e + 0.5).floor()
            }
        })
        .collect();
    (out, changed)
}

/// Periodic (torus) distance between two quasimomenta.
pub fn periodic_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) - (x - y).round();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct FiberMatrix {
    pub eta: Vec<f64>,
    /// Original quasimomentum when it had to be reduced into `Y′`.
    pub reduced_from: Option<Vec<f64>>,
    pub matrix: CMat,
}

/// Hermitian matrix of the fiber operator at `η`.
pub fn assemble_fiber<F: Coefficients + ?Sized>(field: &F, basis: &PlanewaveBasis, eta: &[f64]) -> FiberMatrix {
    assert_eq!(field.dim(), basis.dim(), "field and basis dimensions differ");
    assert_eq!(eta.len(), basis.dim(), "quasimomentum has wrong length");
    let (eta_r, changed) = reduce_eta(eta);
    if changed {
        log::debug!("quasimomentum {eta:?} reduced to {eta_r:?}");
    }
    let mut h = match field.laminate() {
        None => laurent(field.series(), basis, &eta_r),
        Some((profile, lam_series)) => {
            let smooth = field.series().add_scaled(lam_series, -1.0);
            let mut h = laurent(&smooth, basis, &eta_r);
            h += inverse_rule(|m| profile.inverse_coeff(m), basis, &eta_r);
            h
        }
    };
    hermitize(&mut h);
    FiberMatrix { eta: eta_r, reduced_from: changed.then(|| eta.to_vec()), matrix: h }
}

fn laurent(series: &FourierSeries, basis: &PlanewaveBasis, eta: &[f64]) -> CMat {
    let n = basis.len();
    let d = basis.dim();
    let shifted: Vec<[f64; 2]> = (0..n).map(|p| basis.shifted(p, eta)).collect();
    let mut h = CMat::zeros(n, n);
    let reach = series.cutoff() as i32;
    for i in 0..n {
        let ki = basis.index(i);
        for j in 0..n {
            let m = sub(ki, basis.index(j));
            if m[0].abs() > reach || m[1].abs() > reach {
                continue;
            }
            let a = series.get(m);
            let mut acc = czero();
            for l in 0..d {
                for q in 0..d {
                    acc += a[l][q] * (shifted[i][l] * shifted[j][q]);
                }
            }
            h[(i, j)] = acc;
        }
    }
    h
}

fn inverse_rule(inv: impl Fn(i32) -> Complex64, basis: &PlanewaveBasis, eta: &[f64]) -> CMat {
    let n = basis.len();
    let t = CMat::from_fn(n, n, |i, j| inv(basis.index(i)[0] - basis.index(j)[0]));
    let t_inv = t
        .cholesky()
        .expect("Toeplitz matrix of 1/a is positive definite")
        .inverse();
    let mut h = t_inv;
    for i in 0..n {
        let si = basis.shifted(i, eta)[0];
        for j in 0..n {
            let sj = basis.shifted(j, eta)[0];
            h[(i, j)] *= si * sj;
        }
    }
    h
}

/// First `n` sorted values of `|k+η|²`.
pub fn shifted_laplacian_eigs(basis: &PlanewaveBasis, eta: &[f64], n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..basis.len())
        .map(|p| basis.shifted(p, eta)[..basis.dim()].iter().map(|x| x * x).sum())
        .collect();
    v.sort_by(f64::total_cmp);
    v.truncate(n);
    v
}

/// Matrix of multiplication by `φ`: `M_{k,k′} = φ̂(k−k′)`.
/// Modes of `φ` beyond `2K` cannot act within the basis and are dropped;
/// the returned flag records whether that happened.
pub fn multiplication_matrix(phi: &ScalarSeries, basis: &PlanewaveBasis) -> (CMat, bool) {
    let n = basis.len();
    let reach = 2 * basis.cutoff() as i32;
    let truncated = phi.lattice().indices().zip(phi.coeffs()).any(|(k, v)| {
        (k[0].abs() > reach || k[1].abs() > reach) && v.norm() > 0.0
    });
    let m = CMat::from_fn(n, n, |i, j| phi.get(sub(basis.index(i), basis.index(j))));
    (m, truncated)
}

/// `(∂_j + iη_j) u` in planewave coordinates.
pub fn gradient_vector(u: &CVec, basis: &PlanewaveBasis, eta: &[f64], j: usize) -> CVec {
    CVec::from_fn(basis.len(), |p, _| u[p] * Complex64::new(0.0, basis.shifted(p, eta)[j]))
}

/// Fourier series of the function represented by planewave coefficients `u`.
pub fn function_series(u: &CVec, basis: &PlanewaveBasis) -> ScalarSeries {
    let norm = (2.0 * PI).powf(-(basis.dim() as f64) / 2.0);
    let mut s = ScalarSeries::zeros(basis.dim(), basis.cutoff());
    for p in 0..basis.len() {
        s.set(basis.index(p), u[p] * norm);
    }
    s
}

/// Value of the function with planewave coefficients `u` at `y`.
pub fn synthesize(u: &CVec, basis: &PlanewaveBasis, y: &[f64]) -> Complex64 {
    let norm = (2.0 * PI).powf(-(basis.dim() as f64) / 2.0);
    let mut acc = czero();
    for p in 0..basis.len() {
        let k = basis.index(p);
        let phase: f64 = (0..basis.dim()).map(|j| k[j] as f64 * y[j]).sum();
        acc += u[p] * Complex64::from_polar(1.0, phase);
    }
    acc * norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CoefficientField, ModeTable};
    use crate::linalg::max_abs;

    fn cosine_field() -> CoefficientField {
        let t: ModeTable = vec![
            (vec![0], vec![vec![Complex64::new(1.0, 0.0)]]),
            (vec![1], vec![vec![Complex64::new(0.25, 0.0)]]),
            (vec![-1], vec![vec![Complex64::new(0.25, 0.0)]]),
        ];
        CoefficientField::build_from_fourier(&t, 1, 1).unwrap()
    }

    #[test]
    fn free_fiber_is_diagonal() {
        let b = PlanewaveBasis::new(1, 4);
        let f = assemble_fiber(&CoefficientField::identity(1), &b, &[0.0]);
        for i in 0..b.len() {
            let k = b.index(i)[0] as f64;
            assert_eq!(f.matrix[(i, i)].re, k * k);
        }
        let f = assemble_fiber(&CoefficientField::identity(1), &b, &[0.5]);
        assert_eq!(f.eta, vec![-0.5]);
        assert!(f.reduced_from.is_some());
        let mut d: Vec<f64> = (0..b.len()).map(|i| f.matrix[(i, i)].re).collect();
        d.sort_by(f64::total_cmp);
        assert_eq!(&d[..2], &[0.25, 0.25]);
    }

    /// 256-point trapezoid quadrature of the sesquilinear form.
    #[test]
    fn cosine_fiber_matches_quadrature() {
        let b = PlanewaveBasis::new(1, 1);
        let field = cosine_field();
        for &eta in &[0.0, 0.3] {
            let h = assemble_fiber(&field, &b, &[eta]).matrix;
            let q = 256;
            for i in 0..3 {
                for j in 0..3 {
                    let k = b.index(i)[0] as f64;
                    let kp = b.index(j)[0] as f64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in 0..q {
                        let y = 2.0 * PI * s as f64 / q as f64;
                        let a = 1.0 + 0.5 * y.cos();
                        let grad_kp = Complex64::new(0.0, kp + eta) * Complex64::from_polar(1.0, kp * y);
                        let grad_k = Complex64::new(0.0, k + eta) * Complex64::from_polar(1.0, k * y);
                        acc += a * grad_kp * grad_k.conj();
                    }
                    acc *= 2.0 * PI / q as f64 / (2.0 * PI);
                    assert!((acc - h[(i, j)]).norm() < 1e-13, "entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn shifted_laplacian_values() {
        assert_eq!(shifted_laplacian_eigs(&PlanewaveBasis::new(1, 3), &[0.0], 5), vec![0.0, 1.0, 1.0, 4.0, 4.0]);
        assert_eq!(shifted_laplacian_eigs(&PlanewaveBasis::new(1, 3), &[0.5], 4), vec![0.25, 0.25, 2.25, 2.25]);
        assert_eq!(shifted_laplacian_eigs(&PlanewaveBasis::new(2, 2), &[0.0, 0.0], 6), vec![0.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn multiplication_by_cosine() {
        let b = PlanewaveBasis::new(1, 3);
        let one = ScalarSeries::from_pairs(1, 0, &[([0, 0], Complex64::new(1.0, 0.0))]);
        let (m, _) = multiplication_matrix(&one, &b);
        assert_eq!(m, CMat::identity(7, 7));
        let cos = ScalarSeries::from_pairs(1, 1, &[([1, 0], Complex64::new(0.5, 0.0)), ([-1, 0], Complex64::new(0.5, 0.0))]);
        let (m, truncated) = multiplication_matrix(&cos, &b);
        assert!(!truncated);
        for i in 0..7 {
            for j in 0..7 {
                let expect = if (i as i32 - j as i32).abs() == 1 { 0.5 } else { 0.0 };
                assert_eq!(m[(i, j)].re, expect);
            }
        }
        let high = ScalarSeries::from_pairs(1, 8, &[([8, 0], Complex64::new(1.0, 0.0))]);
        assert!(multiplication_matrix(&high, &b).1);
    }

    #[test]
    fn gradient_of_single_modes() {
        let b = PlanewaveBasis::new(1, 2);
        let mut u = CVec::zeros(5);
        u[b.position([0, 0]).unwrap()] = Complex64::new(1.0, 0.0);
        let g = gradient_vector(&u, &b, &[0.5], 0);
        assert!((g - &u * Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let mut u = CVec::zeros(5);
        u[b.position([-1, 0]).unwrap()] = Complex64::new(1.0, 0.0);
        let g = gradient_vector(&u, &b, &[0.5], 0);
        assert!((g - &u * Complex64::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn laminate_assembly_is_linear_in_added_field() {
        let b = PlanewaveBasis::new(1, 8);
        let lam = CoefficientField::build_laminate_1d(&[1.0, 4.0], &[0.5, 0.5], 16).unwrap();
        let pert = cosine_field().as_perturbation();
        let t = 0.1;
        let sum = lam.add_scaled(&pert, t).unwrap();
        let lhs = assemble_fiber(&sum, &b, &[0.2]).matrix;
        let rhs = assemble_fiber(&lam, &b, &[0.2]).matrix + assemble_fiber(&pert, &b, &[0.2]).matrix * Complex64::new(t, 0.0);
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn reduction_and_distance() {
        assert_eq!(reduce_eta(&[0.5]).0, vec![-0.5]);
        assert_eq!(reduce_eta(&[-0.5]), (vec![-0.5], false));
        assert!((reduce_eta(&[1.3]).0[0] - 0.3).abs() < 1e-15);
        assert!(periodic_distance(&[0.49], &[-0.49]) - 0.02 < 1e-12);
    }
}
