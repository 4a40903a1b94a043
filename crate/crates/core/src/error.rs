use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("velocity row {0} is entirely zero (every discrete velocity must be non-zero)")]
    ZeroVelocityRow(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("steady-state identity violated: |f1 f2 - f3 f4| = {defect:e} exceeds {tolerance:e}")]
    SteadyStateViolation { defect: f64, tolerance: f64 },

    #[error("Lambda0 * Q is not symmetric (asymmetry {asymmetry:e}, scale {scale:e})")]
    NotSymmetric { asymmetry: f64, scale: f64 },

    #[error("whitened collision matrix has a positive eigenvalue {0:e}")]
    PositiveEigenvalue(f64),

    #[error("collision matrix is non-zero but has no dissipative eigenvalue")]
    DegenerateRank,

    #[error("interior damping is not positive (mu = {0:e})")]
    NonPositiveDamping(f64),

    #[error("interior damping cross-check failed: closed form {closed:e}, sampled minimum {sampled:e}")]
    DampingCrossCheck { closed: f64, sampled: f64 },

    #[error("certificate requires a dissipative block but rank is zero")]
    RankZero,

    #[error("law requires the coplanar four-velocity model")]
    NotCoplanar,

    #[error("time step {dt:e} violates the CFL bound {dt_cfl:e}")]
    CflViolation { dt: f64, dt_cfl: f64 },

    #[error("time step {dt:e} exceeds the certified bound {bound:e} (use --force to run anyway)")]
    UncertifiedTimeStep { dt: f64, bound: f64 },

    #[error("matrix is singular to working precision")]
    SingularMatrix,

    #[error("initial data returned a non-finite value at component {component}")]
    NonFiniteSample { component: usize },

    #[error("need at least {needed} samples to fit a decay rate, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("norm sample {0:e} is not positive")]
    NonPositiveNorm(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
