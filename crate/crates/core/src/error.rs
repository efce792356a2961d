use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("field is not coercive: minimum sampled eigenvalue {min_eig:.3e} at y = {at:?}")]
    NotCoercive { min_eig: f64, at: Vec<f64> },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("field violates {invariant} by {defect:.3e}")]
    InvariantViolation { invariant: &'static str, defect: f64 },
    #[error("step |t| = {t:.3e} exceeds the admissible bound sigma0 = {sigma0:.3e}")]
    StepTooLarge { t: f64, sigma0: f64 },
    #[error("eigensolver failed: {0}")]
    SolverFailure(String),
    #[error("no eigenvalue within {tol:.3e} of {lambda0}")]
    EmptyCluster { lambda0: f64, tol: f64 },
    #[error("degenerate cluster: both splitting alternatives vanish")]
    DegenerateCluster,
    #[error("cluster of size {0} cannot be split")]
    ClusterTooSmall(usize),
    #[error("randomized search exhausted {0} retries")]
    RetriesExhausted(usize),
    #[error("ambiguous branch overlap {overlap:.3} at t = {t:.3e}")]
    BranchCollision { t: f64, overlap: f64 },
    #[error("eigenvalue {value:.6e} entered the window at t = {t:.3e}")]
    WindowBreach { t: f64, value: f64 },
    #[error("no candidate perturbation splits band at node {0}")]
    CoverFailure(usize),
    #[error("no bump site with positive gradient")]
    NoBumpSite,
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("refinement left the starting cell at {0:?}")]
    NotLocalMin(Vec<f64>),
    #[error("finite-difference Hessian unstable: error {error:.3e} vs norm {norm:.3e}")]
    StepUnstable { error: f64, norm: f64 },
    #[error("shift {z} is within {dist:.3e} of the spectrum at eta = {eta:?}")]
    NearSingular { z: f64, dist: f64, eta: Vec<f64> },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, Error>;
