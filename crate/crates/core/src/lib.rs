pub mod edge;
pub mod error;
pub mod field;
pub mod fieldfile;
pub mod homogenization;
pub mod lattice;
pub mod linalg;
pub mod perturbation;
pub mod planewave;
pub mod scenarios;
pub mod spectrum;

pub use error::{Error, Result};
