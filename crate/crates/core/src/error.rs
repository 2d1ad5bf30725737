use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "outside the synchronization regime: gamma = {gamma} <= gamma_1^N = {threshold} for N = {n}"
    )]
    Regime { n: usize, gamma: f64, threshold: f64 },

    #[error("invalid parameter: {0}")]
    Domain(String),

    #[error("mode vector violates Hermitian symmetry (imaginary residue {residue:e})")]
    Symmetry { residue: f64 },

    #[error("neighbourhood geometry violated: delta ({delta}) + rho ({rho}) must be < 1")]
    Geometry { delta: f64, rho: f64 },

    #[error("relative standard error {rel_se:e} exceeds tolerance {tol:e}; increase the budget")]
    StatisticalTolerance { rel_se: f64, tol: f64 },

    #[error("inconclusive: all {total} trajectories censored at max_time")]
    Inconclusive { total: usize },

    #[error("numerical blowup in trajectory {trajectory} at step {step}")]
    Blowup { trajectory: usize, step: u64 },

    #[error("quadrature did not reach tolerance: estimate {value:e}, error {error:e}")]
    Quadrature { value: f64, error: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("refusing to overwrite record for instance {instance}: config hash changed (use --force)")]
    HashMismatch { instance: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
