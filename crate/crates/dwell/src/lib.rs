//! Relaxation dynamics of strongly interacting bosons in a double well
//! coupled to dephasing baths.
//!
//! The crate simulates `N` bosons hopping between two modes with on-site
//! repulsion, with each mode's occupation monitored by its own ohmic bath.
//! Two generators are provided: a Redfield master equation built from the
//! asymptotic bath transition operators (finite temperature) and its
//! infinite-temperature Lindblad dephasing limit.  The quantity tracked
//! throughout is the occupation fluctuation
//! `kappa = <n1^2> - <n1>^2`, whose slow algebraic growth toward the
//! steady-state value is the signature of interaction-impeded relaxation.
//!
//! Module layout:
//! - [`fock`]: fixed-particle-number basis, Hamiltonian, spectra.
//! - [`bath`]: spectral density, occupation factors, golden-rule rates,
//!   bath correlation function and transition operators.
//! - [`liouville`]: vectorized generators, propagators, time evolution,
//!   steady states.
//! - [`analysis`]: fluctuation observables, rescaled time, power-law
//!   window fits, collapse metrics.
//! - [`config`] / [`experiment`]: experiment description files and the
//!   run/sweep/plot pipeline behind the `dwell` binary.

pub mod analysis;
pub mod bath;
pub mod cache;
pub mod config;
pub mod experiment;
pub mod fock;
pub mod linalg;
pub mod liouville;
pub mod plots;
pub mod quad;
pub mod svg;

use std::sync::atomic::AtomicU64;

/// Global count of random draws consumed by the crate.  Every computation
/// here is deterministic; nothing increments this.  The CLI `--seedless`
/// flag asserts it stayed zero so that determinism claims are checked, not
/// just promised.
pub static RNG_DRAWS: AtomicU64 = AtomicU64::new(0);

/// Crate-wide error type.  Variants map onto the CLI exit codes:
/// configuration problems exit 2, numerical failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("eigensolver did not converge after {iterations} iterations (dim {dim})")]
    NonConvergence { dim: usize, iterations: usize },

    #[error("quadrature error {estimate:.3e} above tolerance {tolerance:.3e} in {context}")]
    QuadratureTolerance {
        estimate: f64,
        tolerance: f64,
        context: String,
    },

    #[error("matrix exponential budget exceeded: {0}")]
    ExponentialBudget(String),

    #[error("trace deviation {deviation:.3e} at t = {time:.6e} exceeds abort threshold 1e-6")]
    TraceDiverged { time: f64, deviation: f64 },

    #[error("Liouvillian kernel is not a unique steady state: {0}")]
    DegenerateKernel(String),

    #[error("singular matrix in {0}")]
    SingularMatrix(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("plot input incomplete: {0}")]
    PlotInput(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::PlotInput(_) => 2,
            Error::Io(_) | Error::Cache(_) => 2,
            _ => 3,
        }
    }
}
