//! Periodic coefficient fields on the cell `Y = [0, 2π)^d`, stored as
//! truncated Fourier series `A(y) = Σ Â(k) e^{ik·y}`.
//!
//! Coercivity and sup norms are certified by sampling on a uniform grid with
//! `4·Kc` points per axis (at least [`MIN_SAMPLES_PER_AXIS`]). The sup norm is
//! the largest absolute matrix entry on that grid.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{neg, Index, LatticeBox};

pub const MIN_SAMPLES_PER_AXIS: usize = 8;

/// d×d Fourier coefficient; only the leading `d×d` corner is used.
pub type Block = [[Complex64; 2]; 2];

pub const ZERO_BLOCK: Block = [[Complex64::new(0.0, 0.0); 2]; 2];

/// Raw mode table as read from files or built by hand: `(k, matrix rows)`.
pub type ModeTable = Vec<(Vec<i32>, Vec<Vec<Complex64>>)>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    lattice: LatticeBox,
    modes: Vec<Block>,
}

impl FourierSeries {
    pub fn zeros(dim: usize, cutoff: usize) -> Self {
        let lattice = LatticeBox::new(dim, cutoff);
        let modes = vec![ZERO_BLOCK; lattice.len()];
        Self { lattice, modes }
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn cutoff(&self) -> usize {
        self.lattice.cutoff()
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    /// Coefficient at `k`, zero outside the cutoff.
    pub fn get(&self, k: Index) -> Block {
        match self.lattice.position(k) {
            Some(p) => self.modes[p],
            None => ZERO_BLOCK,
        }
    }

    pub fn set(&mut self, k: Index, block: Block) {
        let p = self.lattice.position(k).expect("mode outside cutoff");
        self.modes[p] = block;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Index, &Block)> + '_ {
        self.lattice.indices().zip(self.modes.iter())
    }

    /// Two-stage symmetrization: `S = ½(Â + Âᵀ)`, then `R(k) = ½(S(k) + conj S(−k))`.
    /// Both reality and symmetry then hold bit-exactly.
    pub fn symmetrized(&self) -> Self {
        let d = self.dim();
        let mut sym = self.clone();
        for block in sym.modes.iter_mut() {
            for l in 0..d {
                for m in (l + 1)..d {
                    let v = (block[l][m] + block[m][l]) * 0.5;
                    block[l][m] = v;
                    block[m][l] = v;
                }
            }
        }
        let mut out = sym.clone();
        for (p, k) in self.lattice.indices().enumerate() {
            let a = sym.get(k);
            let b = sym.get(neg(k));
            let mut r = ZERO_BLOCK;
            for l in 0..d {
                for m in 0..d {
                    r[l][m] = (a[l][m] + b[l][m].conj()) * 0.5;
                }
            }
            out.modes[p] = r;
        }
        out
    }

    /// Largest violation of `Â(−k) = conj Â(k)`.
    pub fn reality_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for (k, a) in self.iter() {
            let b = self.get(neg(k));
            for l in 0..d {
                for m in 0..d {
                    worst = worst.max((a[l][m] - b[l][m].conj()).norm());
                }
            }
        }
        worst
    }

    /// Largest violation of `Â(k) = Â(k)ᵀ`.
    pub fn symmetry_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for (_, a) in self.iter() {
            for l in 0..d {
                for m in 0..d {
                    worst = worst.max((a[l][m] - a[m][l]).norm());
                }
            }
        }
        worst
    }

    /// Fourier synthesis at `y`; the imaginary residue is discarded.
    pub fn evaluate(&self, y: &[f64]) -> [[f64; 2]; 2] {
        let d = self.dim();
        let mut acc = ZERO_BLOCK;
        for (k, a) in self.iter() {
            let phase = k[0] as f64 * y[0] + if d == 2 { k[1] as f64 * y[1] } else { 0.0 };
            let e = Complex64::from_polar(1.0, phase);
            for l in 0..d {
                for m in 0..d {
                    acc[l][m] += a[l][m] * e;
                }
            }
        }
        let mut out = [[0.0; 2]; 2];
        for l in 0..d {
            for m in 0..d {
                out[l][m] = acc[l][m].re;
            }
        }
        out
    }

    /// `self + t·other` on the larger of the two cutoffs.
    pub fn add_scaled(&self, other: &FourierSeries, t: f64) -> FourierSeries {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        let cutoff = self.cutoff().max(other.cutoff());
        let mut out = FourierSeries::zeros(self.dim(), cutoff);
        let d = self.dim();
        for p in 0..out.modes.len() {
            let k = out.lattice.index(p);
            let a = self.get(k);
            let b = other.get(k);
            let mut r = ZERO_BLOCK;
            for l in 0..d {
                for m in 0..d {
                    r[l][m] = a[l][m] + b[l][m] * t;
                }
            }
            out.modes[p] = r;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> FourierSeries {
        let mut out = self.clone();
        for block in out.modes.iter_mut() {
            for row in block.iter_mut() {
                for v in row.iter_mut() {
                    *v *= s;
                }
            }
        }
        out
    }

    /// `(min eigenvalue, where, max |entry|)` over the sample grid.
    pub fn sample_stats(&self) -> SampleStats {
        let n = samples_per_axis(self.cutoff());
        let d = self.dim();
        let mut stats = SampleStats { min_eig: f64::INFINITY, argmin: vec![0.0; d], max_entry: 0.0 };
        for y in sample_points(d, n) {
            let a = self.evaluate(&y);
            let lo = min_sym_eig(&a, d);
            if lo < stats.min_eig {
                stats.min_eig = lo;
                stats.argmin = y.clone();
            }
            for row in a.iter().take(d) {
                for v in row.iter().take(d) {
                    stats.max_entry = stats.max_entry.max(v.abs());
                }
            }
        }
        stats
    }

    pub fn from_table(table: &ModeTable, dim: usize, cutoff: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::BadShape(format!("dimension {dim} not in {{1,2}}")));
        }
        let mut series = FourierSeries::zeros(dim, cutoff);
        let mut has_zero = false;
        for (k, rows) in table {
            if k.len() != dim {
                return Err(Error::BadShape(format!("index {k:?} has wrong length for d={dim}")));
            }
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(Error::BadShape(format!("mode {k:?} is not a {dim}x{dim} matrix")));
            }
            let idx = [k[0], if dim == 2 { k[1] } else { 0 }];
            if !series.lattice.contains(idx) {
                return Err(Error::BadShape(format!("mode {k:?} outside cutoff {cutoff}")));
            }
            has_zero |= idx == [0, 0];
            let mut block = ZERO_BLOCK;
            for l in 0..dim {
                for m in 0..dim {
                    block[l][m] = rows[l][m];
                }
            }
            series.set(idx, block);
        }
        if !has_zero {
            return Err(Error::BadShape("table has no k = 0 mode".into()));
        }
        Ok(series)
    }

    /// Export as a mode table (nonzero modes only, plus `k = 0`).
    pub fn to_table(&self) -> ModeTable {
        let d = self.dim();
        self.iter()
            .filter(|(k, a)| *k == [0, 0] || a.iter().flatten().any(|v| v.norm() > 0.0))
            .map(|(k, a)| {
                let idx = k[..d].to_vec();
                let rows = (0..d).map(|l| (0..d).map(|m| a[l][m]).collect()).collect();
                (idx, rows)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SampleStats {
    pub min_eig: f64,
    pub argmin: Vec<f64>,
    pub max_entry: f64,
}

pub fn samples_per_axis(cutoff: usize) -> usize {
    (4 * cutoff).max(MIN_SAMPLES_PER_AXIS)
}

/// Uniform points `2π i / n` per axis, lexicographic.
pub fn sample_points(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let h = 2.0 * PI / n as f64;
    match dim {
        1 => (0..n).map(|i| vec![i as f64 * h]).collect(),
        _ => (0..n * n).map(|p| vec![(p / n) as f64 * h, (p % n) as f64 * h]).collect(),
    }
}

fn min_sym_eig(a: &[[f64; 2]; 2], d: usize) -> f64 {
    if d == 1 {
        return a[0][0];
    }
    let tr = a[0][0] + a[1][1];
    let diff = a[0][0] - a[1][1];
    0.5 * (tr - (diff * diff + 4.0 * a[0][1] * a[1][0]).sqrt())
}

/// Piecewise-constant 1D profile; segments laid out from `y = 0` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct LaminateProfile {
    values: Vec<f64>,
    breaks: Vec<f64>,
}

impl LaminateProfile {
    pub fn new(values: &[f64], fractions: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() != fractions.len() {
            return Err(Error::BadShape("values and fractions must be nonempty and equally long".into()));
        }
        if values.iter().any(|v| !(*v > 0.0)) || fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::BadShape("laminate values and fractions must be positive".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadShape(format!("volume fractions sum to {total}, not 1")));
        }
        let mut breaks = vec![0.0];
        let mut acc = 0.0;
        for f in fractions {
            acc += f;
            breaks.push(2.0 * PI * acc / total);
        }
        Ok(Self { values: values.to_vec(), breaks })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.breaks.windows(2).map(|w| (w[1] - w[0]) / (2.0 * PI)).collect()
    }

    fn transform(&self, k: i32, f: impl Fn(f64) -> f64) -> Complex64 {
        if k == 0 {
            let sum: f64 = self.values.iter().zip(self.breaks.windows(2)).map(|(v, w)| f(*v) * (w[1] - w[0])).sum();
            return c(sum / (2.0 * PI));
        }
        let kf = k as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (v, w) in self.values.iter().zip(self.breaks.windows(2)) {
            let diff = Complex64::from_polar(1.0, -kf * w[0]) - Complex64::from_polar(1.0, -kf * w[1]);
            acc += diff * f(*v);
        }
        acc / Complex64::new(0.0, 2.0 * PI * kf)
    }

    /// Exact Fourier coefficient of the profile `a`.
    pub fn coeff(&self, k: i32) -> Complex64 {
        self.transform(k, |v| v)
    }

    /// Exact Fourier coefficient of `1/a`.
    pub fn inverse_coeff(&self, k: i32) -> Complex64 {
        self.transform(k, |v| 1.0 / v)
    }

    pub fn harmonic_mean(&self) -> f64 {
        1.0 / self.inverse_coeff(0).re
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    fn series(&self, cutoff: usize) -> FourierSeries {
        let mut s = FourierSeries::zeros(1, cutoff);
        for k in -(cutoff as i32)..=(cutoff as i32) {
            let mut block = ZERO_BLOCK;
            block[0][0] = self.coeff(k);
            s.set([k, 0], block);
        }
        s.symmetrized()
    }
}

/// Access to the Fourier data that fiber assembly needs.
pub trait Coefficients {
    fn series(&self) -> &FourierSeries;

    /// Laminate profile assembled by the inverse rule, with the truncated
    /// series it contributes to [`Coefficients::series`].
    fn laminate(&self) -> Option<(&LaminateProfile, &FourierSeries)> {
        None
    }

    fn dim(&self) -> usize {
        self.series().dim()
    }
}

#[derive(Debug, Clone)]
struct LaminatePart {
    profile: LaminateProfile,
    series: FourierSeries,
}

/// Real, symmetric, coercive periodic matrix field.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    series: FourierSeries,
    alpha: f64,
    sup_norm: f64,
    laminate: Option<Arc<LaminatePart>>,
}

impl Coefficients for CoefficientField {
    fn series(&self) -> &FourierSeries {
        &self.series
    }

    fn laminate(&self) -> Option<(&LaminateProfile, &FourierSeries)> {
        self.laminate.as_ref().map(|l| (&l.profile, &l.series))
    }
}

impl CoefficientField {
    pub fn build_from_fourier(table: &ModeTable, dim: usize, cutoff: usize) -> Result<Self> {
        let series = FourierSeries::from_table(table, dim, cutoff)?;
        Self::from_series(series)
    }

    /// Symmetrizes and certifies coercivity on the sample grid.
    pub fn from_series(series: FourierSeries) -> Result<Self> {
        let series = series.symmetrized();
        let stats = series.sample_stats();
        if !(stats.min_eig > 0.0) {
            return Err(Error::NotCoercive { min_eig: stats.min_eig, at: stats.argmin });
        }
        Ok(Self { series, alpha: stats.min_eig, sup_norm: stats.max_entry, laminate: None })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let mut s = FourierSeries::zeros(dim, 0);
        let mut block = ZERO_BLOCK;
        for l in 0..dim {
            block[l][l] = c(value);
        }
        s.set([0, 0], block);
        Self::from_series(s).expect("positive constant is coercive")
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(dim, 1.0)
    }

    /// Scalar field `a(y)·I` from scalar Fourier coefficients.
    pub fn scalar(coeffs: &ScalarSeries) -> Result<Self> {
        Self::from_series(coeffs.times_identity())
    }

    /// Diagonal field `diag(a_1(y_1), a_2(y_2))` from two 1D scalar series.
    pub fn separable(a1: &ScalarSeries, a2: &ScalarSeries) -> Result<Self> {
        if a1.dim() != 1 || a2.dim() != 1 {
            return Err(Error::BadShape("separable factors must be one-dimensional".into()));
        }
        let cutoff = a1.cutoff().max(a2.cutoff());
        let mut s = FourierSeries::zeros(2, cutoff);
        for k in -(cutoff as i32)..=(cutoff as i32) {
            let mut b1 = s.get([k, 0]);
            b1[0][0] = a1.get([k, 0]);
            s.set([k, 0], b1);
            let mut b2 = s.get([0, k]);
            b2[1][1] = a2.get([k, 0]);
            s.set([0, k], b2);
        }
        Self::from_series(s)
    }

    /// Piecewise-constant 1D field truncated at `cutoff`.
    pub fn build_laminate_1d(values: &[f64], fractions: &[f64], cutoff: usize) -> Result<Self> {
        let profile = LaminateProfile::new(values, fractions)?;
        let series = profile.series(cutoff);
        let mut field = Self::from_series(series.clone())?;
        field.laminate = Some(Arc::new(LaminatePart { profile, series }));
        Ok(field)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn cutoff(&self) -> usize {
        self.series.cutoff()
    }

    pub fn is_laminate(&self) -> bool {
        self.laminate.is_some()
    }

    pub fn evaluate(&self, y: &[f64]) -> [[f64; 2]; 2] {
        self.series.evaluate(y)
    }

    /// `α / (2d‖B‖∞)`.
    pub fn sigma0(&self, b: &PerturbationField) -> f64 {
        if b.sup_norm() == 0.0 {
            return f64::INFINITY;
        }
        self.alpha / (2.0 * self.dim() as f64 * b.sup_norm())
    }

    /// `A + tB` for `|t| < σ₀`, recertified with `α ≥ α_A / 2`.
    pub fn add_scaled(&self, b: &PerturbationField, t: f64) -> Result<Self> {
        let sigma0 = self.sigma0(b);
        if !(t.abs() < sigma0) {
            return Err(Error::StepTooLarge { t, sigma0 });
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        let series = self.series.add_scaled(b.series(), t).symmetrized();
        let stats = series.sample_stats();
        if !(stats.min_eig >= 0.5 * self.alpha) {
            return Err(Error::NotCoercive { min_eig: stats.min_eig, at: stats.argmin });
        }
        let sup_norm = stats.max_entry.min(self.sup_norm + t.abs() * b.sup_norm());
        Ok(Self { series, alpha: stats.min_eig, sup_norm, laminate: self.laminate.clone() })
    }

    /// `s·A` for `s > 0`, keeping the laminate structure.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidParams("scale must be positive".into()));
        }
        match &self.laminate {
            None => Self::from_series(self.series.scaled(s)),
            Some(l) => {
                let values: Vec<f64> = l.profile.values().iter().map(|v| v * s).collect();
                let mut field = Self::build_laminate_1d(&values, &l.profile.fractions(), l.series.cutoff())?;
                let smooth = self.series.add_scaled(&l.series, -1.0).scaled(s);
                field.series = field.series.add_scaled(&smooth, 1.0).symmetrized();
                Ok(field)
            }
        }
    }

    /// Reinterpret as a perturbation (no coercivity requirement).
    pub fn as_perturbation(&self) -> PerturbationField {
        PerturbationField::from_series(self.series.clone(), None)
    }
}

/// Real symmetric periodic field without coercivity requirement.
#[derive(Debug, Clone)]
pub struct PerturbationField {
    series: FourierSeries,
    sup_norm: f64,
    order: Option<usize>,
}

impl Coefficients for PerturbationField {
    fn series(&self) -> &FourierSeries {
        &self.series
    }
}

impl PerturbationField {
    pub fn build_from_fourier(table: &ModeTable, dim: usize, cutoff: usize) -> Result<Self> {
        Ok(Self::from_series(FourierSeries::from_table(table, dim, cutoff)?, Some(cutoff)))
    }

    pub fn from_series(series: FourierSeries, order: Option<usize>) -> Self {
        let series = series.symmetrized();
        let sup_norm = series.sample_stats().max_entry;
        Self { series, sup_norm, order }
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_series(FourierSeries::zeros(dim, 0), Some(0))
    }

    /// `diag(0, …, β, …, 0)` with `β` in slot `j`.
    pub fn diagonal_slot(beta: &ScalarSeries, slot: usize) -> Self {
        let d = beta.dim();
        assert!(slot < d, "slot out of range");
        let mut s = FourierSeries::zeros(d, beta.cutoff());
        for (p, k) in beta.lattice.indices().enumerate() {
            let mut block = ZERO_BLOCK;
            block[slot][slot] = beta.coeffs[p];
            s.set(k, block);
        }
        Self::from_series(s, Some(beta.cutoff()))
    }

    /// `β·I`.
    pub fn scalar(beta: &ScalarSeries) -> Self {
        Self::from_series(beta.times_identity(), Some(beta.cutoff()))
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn order(&self) -> Option<usize> {
        self.order
    }

    pub fn is_zero(&self) -> bool {
        self.series.modes.iter().flatten().flatten().all(|v| *v == Complex64::new(0.0, 0.0))
    }

    pub fn evaluate(&self, y: &[f64]) -> [[f64; 2]; 2] {
        self.series.evaluate(y)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { series: self.series.scaled(s), sup_norm: self.sup_norm * s.abs(), order: self.order }
    }

    /// Rescale so that `‖B‖∞ = 1` (no-op for the zero field).
    pub fn normalized(&self) -> Self {
        if self.sup_norm == 0.0 {
            return self.clone();
        }
        let mut out = self.scaled(1.0 / self.sup_norm);
        out.sup_norm = 1.0;
        out
    }

    /// `self + t·other`.
    pub fn add_scaled(&self, other: &PerturbationField, t: f64) -> Self {
        let order = match (self.order, other.order) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        Self::from_series(self.series.add_scaled(&other.series, t), order)
    }
}

/// Scalar periodic function as Fourier coefficients `f(y) = Σ f̂(k) e^{ik·y}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    lattice: LatticeBox,
    coeffs: Vec<Complex64>,
}

impl ScalarSeries {
    pub fn zeros(dim: usize, cutoff: usize) -> Self {
        let lattice = LatticeBox::new(dim, cutoff);
        let coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
        Self { lattice, coeffs }
    }

    pub fn from_pairs(dim: usize, cutoff: usize, pairs: &[(Index, Complex64)]) -> Self {
        let mut s = Self::zeros(dim, cutoff);
        for (k, v) in pairs {
            s.set(*k, *v);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn cutoff(&self) -> usize {
        self.lattice.cutoff()
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, k: Index) -> Complex64 {
        self.lattice.position(k).map_or(Complex64::new(0.0, 0.0), |p| self.coeffs[p])
    }

    pub fn set(&mut self, k: Index, v: Complex64) {
        let p = self.lattice.position(k).expect("mode outside cutoff");
        self.coeffs[p] = v;
    }

    pub fn evaluate(&self, y: &[f64]) -> Complex64 {
        let d = self.dim();
        self.lattice
            .indices()
            .zip(&self.coeffs)
            .map(|(k, v)| {
                let phase = k[0] as f64 * y[0] + if d == 2 { k[1] as f64 * y[1] } else { 0.0 };
                v * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }

    /// Restriction (or zero extension) to another cutoff.
    pub fn truncated(&self, cutoff: usize) -> Self {
        let mut out = Self::zeros(self.dim(), cutoff);
        for (p, k) in out.lattice.clone().indices().enumerate() {
            out.coeffs[p] = self.get(k);
        }
        out
    }

    /// Fourier coefficients of the real part `(f + conj f)/2`.
    pub fn real_part(&self) -> Self {
        let mut out = self.clone();
        for (p, k) in self.lattice.indices().enumerate() {
            out.coeffs[p] = (self.get(k) + self.get(neg(k)).conj()) * 0.5;
        }
        out
    }

    /// Fourier coefficients of the imaginary part `(f − conj f)/(2i)`.
    pub fn imag_part(&self) -> Self {
        let mut out = self.clone();
        for (p, k) in self.lattice.indices().enumerate() {
            out.coeffs[p] = (self.get(k) - self.get(neg(k)).conj()) / Complex64::new(0.0, 2.0);
        }
        out
    }

    pub fn l2_coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { lattice: self.lattice.clone(), coeffs: self.coeffs.iter().map(|v| v * s).collect() }
    }

    /// `self + t·other` on the larger cutoff.
    pub fn add_scaled(&self, other: &ScalarSeries, t: f64) -> Self {
        let cutoff = self.cutoff().max(other.cutoff());
        let mut out = Self::zeros(self.dim(), cutoff);
        for (p, k) in out.lattice.clone().indices().enumerate() {
            out.coeffs[p] = self.get(k) + other.get(k) * t;
        }
        out
    }

    /// Product of two series (full convolution, cutoff = sum of cutoffs).
    pub fn product(&self, other: &ScalarSeries) -> Self {
        let cutoff = self.cutoff() + other.cutoff();
        let mut out = Self::zeros(self.dim(), cutoff);
        for (ka, a) in self.lattice.indices().zip(&self.coeffs) {
            if a.norm() == 0.0 {
                continue;
            }
            for (kb, b) in other.lattice.indices().zip(&other.coeffs) {
                let k = crate::lattice::add(ka, kb);
                let p = out.lattice.position(k).expect("within summed cutoff");
                out.coeffs[p] += a * b;
            }
        }
        out
    }

    /// Series of `conj f`.
    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        for (p, k) in self.lattice.indices().enumerate() {
            out.coeffs[p] = self.get(neg(k)).conj();
        }
        out
    }

    /// `∫_Y f dy = (2π)^d f̂(0)`.
    pub fn integral(&self) -> Complex64 {
        self.get([0, 0]) * (2.0 * PI).powi(self.dim() as i32)
    }

    fn times_identity(&self) -> FourierSeries {
        let d = self.dim();
        let mut s = FourierSeries::zeros(d, self.cutoff());
        for (p, k) in self.lattice.indices().enumerate() {
            let mut block = ZERO_BLOCK;
            for l in 0..d {
                block[l][l] = self.coeffs[p];
            }
            s.set(k, block);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_table(pairs: &[(i32, f64)]) -> ModeTable {
        pairs.iter().map(|(k, v)| (vec![*k], vec![vec![c(*v)]])).collect()
    }

    #[test]
    fn identity_field() {
        let f = CoefficientField::build_from_fourier(&scalar_table(&[(0, 1.0)]), 1, 0).unwrap();
        assert_eq!(f.alpha(), 1.0);
        assert_eq!(f.sup_norm(), 1.0);
        assert_eq!(f.evaluate(&[1.234])[0][0], 1.0);
    }

    #[test]
    fn cosine_field() {
        let f = CoefficientField::build_from_fourier(&scalar_table(&[(0, 1.0), (1, 0.25), (-1, 0.25)]), 1, 1).unwrap();
        assert!((f.alpha() - 0.5).abs() < 1e-14);
        assert!((f.evaluate(&[0.0])[0][0] - 1.5).abs() < 1e-14);
        assert!((f.sup_norm() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn not_coercive() {
        let r = CoefficientField::build_from_fourier(&scalar_table(&[(0, 1.0), (1, 0.6), (-1, 0.6)]), 1, 1);
        assert!(matches!(r, Err(Error::NotCoercive { .. })));
    }

    #[test]
    fn bad_shapes() {
        let t: ModeTable = vec![(vec![0], vec![vec![c(1.0), c(0.0)]])];
        assert!(matches!(CoefficientField::build_from_fourier(&t, 1, 0), Err(Error::BadShape(_))));
        let t: ModeTable = vec![(vec![0, 0], vec![vec![c(1.0)]])];
        assert!(matches!(CoefficientField::build_from_fourier(&t, 2, 0), Err(Error::BadShape(_))));
        let t = scalar_table(&[(1, 1.0)]);
        assert!(matches!(CoefficientField::build_from_fourier(&t, 1, 1), Err(Error::BadShape(_))));
        let t = scalar_table(&[(0, 1.0), (3, 0.1)]);
        assert!(matches!(CoefficientField::build_from_fourier(&t, 1, 2), Err(Error::BadShape(_))));
    }

    #[test]
    fn laminate_mean_and_harmonic_mean() {
        let f = CoefficientField::build_laminate_1d(&[1.0, 4.0], &[0.5, 0.5], 32).unwrap();
        assert!((f.series().get([0, 0])[0][0].re - 2.5).abs() < 1e-14);
        let p = LaminateProfile::new(&[1.0, 4.0], &[0.5, 0.5]).unwrap();
        assert!((p.harmonic_mean() - 1.6).abs() < 1e-14);
        let p = LaminateProfile::new(&[1.0, 9.0], &[0.25, 0.75]).unwrap();
        assert!((p.harmonic_mean() - 3.0).abs() < 1e-13);
        let f = CoefficientField::build_laminate_1d(&[1.0], &[1.0], 4).unwrap();
        assert!((f.alpha() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn laminate_away_from_interfaces() {
        let f = CoefficientField::build_laminate_1d(&[1.0, 4.0], &[0.5, 0.5], 32).unwrap();
        // profile: 1 on [0, π), 4 on [π, 2π)
        assert!((f.evaluate(&[PI / 2.0])[0][0] - 1.0).abs() < 0.1);
        assert!((f.evaluate(&[3.0 * PI / 2.0])[0][0] - 4.0).abs() < 0.1);
    }

    #[test]
    fn add_scaled_checks_step() {
        let a = CoefficientField::identity(1);
        let b = PerturbationField::diagonal_slot(
            &ScalarSeries::from_pairs(1, 1, &[([1, 0], c(0.5)), ([-1, 0], c(0.5))]),
            0,
        );
        assert!((a.sigma0(&b) - 0.5).abs() < 1e-14);
        let ab = a.add_scaled(&b, 0.25).unwrap();
        assert!(ab.alpha() >= 0.5);
        assert!((ab.evaluate(&[0.0])[0][0] - 1.25).abs() < 1e-14);
        assert!(matches!(a.add_scaled(&b, 0.75), Err(Error::StepTooLarge { .. })));
        let same = a.add_scaled(&b, 0.0).unwrap();
        assert_eq!(same.series(), a.series());
    }
}
