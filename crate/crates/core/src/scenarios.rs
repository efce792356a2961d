//! Reference coefficient fields shared by the validation suite, the CLI and tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::field::{CoefficientField, ScalarSeries};

/// `c0 + Σ_k (a_k cos ky + b_k sin ky)` in 1D.
pub fn cosine_series(c0: f64, cos: &[f64], sin: &[f64]) -> ScalarSeries {
    let cutoff = cos.len().max(sin.len());
    let mut s = ScalarSeries::zeros(1, cutoff);
    s.set([0, 0], Complex64::new(c0, 0.0));
    for k in 1..=cutoff {
        let a = cos.get(k - 1).copied().unwrap_or(0.0);
        let b = sin.get(k - 1).copied().unwrap_or(0.0);
        s.set([k as i32, 0], Complex64::new(a / 2.0, -b / 2.0));
        s.set([-(k as i32), 0], Complex64::new(a / 2.0, b / 2.0));
    }
    s
}

/// Two-phase laminate `(values; fractions)` in 1D.
pub fn laminate(values: &[f64], fractions: &[f64], cutoff: usize) -> Result<CoefficientField> {
    CoefficientField::build_laminate_1d(values, fractions, cutoff)
}

/// `1 + 1.1 cos y + 0.6 cos 2y`: its first two 1D bands leave a wide gap below the third.
pub fn wide_gap_profile() -> ScalarSeries {
    cosine_series(1.0, &[1.1, 0.6], &[])
}

/// `diag(a(y1), a(y2))` with `a` from [`wide_gap_profile`]. At `η = 0` the 2D
/// spectrum has a doubly degenerate upper gap edge `μ_3(0)` from the crossing
/// modes `(1,3)` and `(3,1)`.
pub fn separable_crossing_field() -> Result<CoefficientField> {
    let a = wide_gap_profile();
    CoefficientField::separable(&a, &a)
}

/// Seeded coercive scalar trig polynomial of the given degree in 1D.
pub fn random_scalar_field(seed: u64, degree: usize) -> Result<CoefficientField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos: Vec<f64> = (0..degree).map(|_| rng.random_range(-0.5..0.5)).collect();
    let sin: Vec<f64> = (0..degree).map(|_| rng.random_range(-0.5..0.5)).collect();
    let total: f64 = cos.iter().chain(&sin).map(|v| v.abs()).sum();
    let c0 = total + rng.random_range(0.2..1.5);
    CoefficientField::scalar(&cosine_series(c0, &cos, &sin))
}

/// Seeded coercive anisotropic 2D field with off-diagonal coupling.
pub fn random_matrix_field_2d(seed: u64) -> Result<CoefficientField> {
    use crate::field::{FourierSeries, ZERO_BLOCK};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = FourierSeries::zeros(2, 1);
    let mut block0 = ZERO_BLOCK;
    block0[0][0] = Complex64::new(2.0, 0.0);
    block0[1][1] = Complex64::new(1.5, 0.0);
    block0[0][1] = Complex64::new(0.2, 0.0);
    block0[1][0] = Complex64::new(0.2, 0.0);
    s.set([0, 0], block0);
    for k in [[1, 0], [0, 1], [1, 1], [1, -1]] {
        let mut b = ZERO_BLOCK;
        for (i, j) in [(0, 0), (1, 1), (0, 1)] {
            let v = Complex64::new(rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12));
            b[i][j] = v;
            if i != j {
                b[j][i] = v;
            }
        }
        s.set(k, b);
        let mut conj = ZERO_BLOCK;
        for i in 0..2 {
            for j in 0..2 {
                conj[i][j] = b[i][j].conj();
            }
        }
        s.set([-k[0], -k[1]], conj);
    }
    CoefficientField::from_series(s)
}
