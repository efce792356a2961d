//! Dense complex linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 0;

pub fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Replace `H` by `½(H + Hᴴ)`, exactly Hermitian afterwards.
pub fn hermitize(h: &mut CMat) {
    let n = h.nrows();
    for i in 0..n {
        h[(i, i)] = Complex64::new(h[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            h[(i, j)] = v;
            h[(j, i)] = v.conj();
        }
    }
}

/// Rotate `v` so its largest-magnitude entry is real and positive.
pub fn fix_phase(v: &mut CVec) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, x) in v.iter().enumerate() {
        // strict comparison with a tiny relative margin keeps ties on the first index
        if x.norm() > best_mag * (1.0 + 1e-9) {
            best_mag = x.norm();
            best = i;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / v[best].norm();
        *v *= phase;
    }
}

/// Full Hermitian eigendecomposition, ascending, with deterministic phases.
pub fn eigh(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::SolverFailure("matrix is not square".into()));
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SolverFailure("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(h.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::SolverFailure("symmetric QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v: CVec = eig.eigenvectors.column(i).into_owned();
        fix_phase(&mut v);
        vectors.set_column(col, &v);
    }
    Ok((values, vectors))
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(h: &CMat) -> Result<Vec<f64>> {
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::SolverFailure("matrix has non-finite entries".into()));
    }
    let mut v: Vec<f64> = h.clone().symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Spectral norm of a Hermitian matrix: `max |λ|`.
pub fn norm_hermitian(h: &CMat) -> Result<f64> {
    let v = eigvalsh(h)?;
    Ok(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Spectral norm of a general matrix via `sqrt(λ_max(MᴴM))`.
pub fn norm_general(m: &CMat) -> Result<f64> {
    let g = m.adjoint() * m;
    let v = eigvalsh(&g)?;
    Ok(v.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// `V diag(f(λ)) Vᴴ`.
pub fn spectral_function(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let mut scaled = vectors.clone();
    for (j, lam) in values.iter().enumerate() {
        let s = f(*lam);
        scaled.column_mut(j).scale_mut(s);
    }
    let mut out = scaled * vectors.adjoint();
    hermitize(&mut out);
    out
}

/// Max entrywise modulus.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.norm()))
}

pub fn real_eigvals_sym(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = CMat::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        hermitize(&mut h);
        h
    }

    #[test]
    fn reconstructs_random_hermitian() {
        for seed in 0..5 {
            let h = random_hermitian(6, seed);
            let (vals, vecs) = eigh(&h).unwrap();
            let back = spectral_function(&vals, &vecs, |x| x);
            assert!(max_abs(&(back - &h)) < 1e-12);
            let gram = vecs.adjoint() * &vecs;
            assert!(max_abs(&(gram - CMat::identity(6, 6))) < 1e-12);
        }
    }

    #[test]
    fn large_residuals_are_tiny() {
        let h = random_hermitian(200, 7) * Complex64::new(500.0, 0.0);
        let (vals, vecs) = eigh(&h).unwrap();
        for j in 0..200 {
            let v = vecs.column(j);
            let r = &h * v - v * Complex64::new(vals[j], 0.0);
            assert!(r.norm() <= 1e-10 * (1.0 + vals[j].abs()), "residual {}", r.norm());
        }
    }

    #[test]
    fn diagonal_case_is_exact() {
        let diag = [0.0, 1.0, 1.0, 4.0, 4.0];
        let h = CMat::from_fn(5, 5, |i, j| if i == j { Complex64::new(diag[i], 0.0) } else { czero() });
        let (vals, vecs) = eigh(&h).unwrap();
        assert_eq!(vals, diag.to_vec());
        for j in 0..5 {
            assert!((vecs.column(j).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_fixing_is_deterministic() {
        let mut v = CVec::from_vec(vec![Complex64::new(0.0, 0.5), Complex64::new(0.0, -0.8)]);
        fix_phase(&mut v);
        assert!(v[1].im.abs() < 1e-15 && v[1].re > 0.0);
    }

    #[test]
    fn general_norm_matches_hermitian() {
        let h = random_hermitian(8, 3);
        assert!((norm_general(&h).unwrap() - norm_hermitian(&h).unwrap()).abs() < 1e-12);
    }
}
