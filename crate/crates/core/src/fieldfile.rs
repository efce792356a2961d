//! TOML field files.
//!
//! ```toml
//! dimension = 1
//! cutoff = 1
//!
//! [[mode]]
//! k = [0]
//! re = [[1.0]]
//!
//! [[mode]]
//! k = [1]
//! re = [[0.25]]
//!
//! [[mode]]
//! k = [-1]
//! re = [[0.25]]
//! ```
//!
//! `im` defaults to zero. A 1D laminate can be given instead of modes with a
//! `[laminate]` table holding `values` and `fractions`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, Coefficients, FourierSeries, ModeTable, PerturbationField};

/// Largest reality or symmetry defect a file may carry before symmetrization.
pub const FILE_INVARIANT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRecord {
    pub k: Vec<i32>,
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaminateSpec {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    pub dimension: usize,
    pub cutoff: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laminate: Option<LaminateSpec>,
    #[serde(default, rename = "mode", skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeRecord>,
}

impl FieldFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadShape(format!("field file: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("field file serializes")
    }

    fn table(&self) -> Result<ModeTable> {
        self.modes
            .iter()
            .map(|m| {
                let im = m.im.clone().unwrap_or_else(|| m.re.iter().map(|r| vec![0.0; r.len()]).collect());
                if im.len() != m.re.len() || im.iter().zip(&m.re).any(|(a, b)| a.len() != b.len()) {
                    return Err(Error::BadShape(format!("mode {:?}: re and im shapes differ", m.k)));
                }
                let rows = m.re.iter().zip(&im).map(|(r, i)| r.iter().zip(i).map(|(a, b)| Complex64::new(*a, *b)).collect()).collect();
                Ok((m.k.clone(), rows))
            })
            .collect()
    }

    /// Raw series with the reality and symmetry checks applied.
    fn checked_series(&self) -> Result<FourierSeries> {
        let series = FourierSeries::from_table(&self.table()?, self.dimension, self.cutoff)?;
        let real = series.reality_defect();
        if real > FILE_INVARIANT_TOL {
            return Err(Error::InvariantViolation { invariant: "reality A(-k) = conj A(k)", defect: real });
        }
        let sym = series.symmetry_defect();
        if sym > FILE_INVARIANT_TOL {
            return Err(Error::InvariantViolation { invariant: "symmetry A(k) = A(k)^T", defect: sym });
        }
        Ok(series)
    }

    pub fn to_field(&self) -> Result<CoefficientField> {
        match &self.laminate {
            Some(l) => {
                if self.dimension != 1 || !self.modes.is_empty() {
                    return Err(Error::BadShape("a laminate file is 1D and has no mode records".into()));
                }
                CoefficientField::build_laminate_1d(&l.values, &l.fractions, self.cutoff)
            }
            None => CoefficientField::from_series(self.checked_series()?),
        }
    }

    pub fn to_perturbation(&self) -> Result<PerturbationField> {
        if self.laminate.is_some() {
            return Err(Error::BadShape("a perturbation file needs mode records".into()));
        }
        Ok(PerturbationField::from_series(self.checked_series()?, Some(self.cutoff)))
    }

    /// Nonzero modes of any field, ready to write.
    pub fn from_coefficients<F: Coefficients + ?Sized>(field: &F) -> Self {
        let series = field.series();
        let modes = series
            .to_table()
            .into_iter()
            .map(|(k, rows)| {
                let re = rows.iter().map(|r| r.iter().map(|c| c.re).collect()).collect();
                let any_im = rows.iter().flatten().any(|c| c.im != 0.0);
                let im = any_im.then(|| rows.iter().map(|r| r.iter().map(|c| c.im).collect()).collect());
                ModeRecord { k, re, im }
            })
            .collect();
        Self { dimension: series.dim(), cutoff: series.cutoff(), laminate: None, modes }
    }
}

pub fn load_field(text: &str) -> Result<CoefficientField> {
    FieldFile::parse(text)?.to_field()
}

#[cfg(test)]
mod tests {
    use super::*;

    const COSINE: &str = "dimension = 1\ncutoff = 1\n[[mode]]\nk = [0]\nre = [[1.0]]\n[[mode]]\nk = [1]\nre = [[0.25]]\n[[mode]]\nk = [-1]\nre = [[0.25]]\n";

    #[test]
    fn cosine_file_loads() {
        let f = load_field(COSINE).unwrap();
        assert!((f.alpha() - 0.5).abs() < 1e-12);
        assert!((f.evaluate(&[0.0])[0][0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_preserves_modes() {
        let f = load_field(COSINE).unwrap();
        let again = load_field(&FieldFile::from_coefficients(&f).to_toml()).unwrap();
        assert_eq!(f.series(), again.series());
    }

    #[test]
    fn rejects_broken_reality() {
        let text = COSINE.replace("k = [-1]\nre = [[0.25]]", "k = [-1]\nre = [[0.3]]");
        match load_field(&text) {
            Err(Error::InvariantViolation { invariant, .. }) => assert!(invariant.starts_with("reality")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric_block() {
        let text = "dimension = 2\ncutoff = 0\n[[mode]]\nk = [0, 0]\nre = [[1.0, 0.1], [0.0, 1.0]]\n";
        assert!(matches!(load_field(text), Err(Error::InvariantViolation { invariant: "symmetry A(k) = A(k)^T", .. })));
    }

    #[test]
    fn laminate_file() {
        let f = load_field("dimension = 1\ncutoff = 32\n[laminate]\nvalues = [1.0, 4.0]\nfractions = [0.5, 0.5]\n").unwrap();
        assert!(f.is_laminate());
        assert!((f.series().get([0, 0])[0][0].re - 2.5).abs() < 1e-12);
    }

    #[test]
    fn not_coercive_is_reported() {
        let text = COSINE.replace("0.25", "0.6");
        assert!(matches!(load_field(&text), Err(Error::NotCoercive { .. })));
    }
}
