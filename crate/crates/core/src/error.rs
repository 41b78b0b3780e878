use thiserror::Error;

/// Everything that can go wrong inside the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative sup-norm `{0}` is unbounded for this potential")]
    UnboundedDerivative(&'static str),

    #[error("adaptive integrator stalled at t = {t} (step {step:e})")]
    StepSizeUnderflow { t: f64, step: f64 },

    #[error("coherent state at q = {q:?} leaks {tail:e} of its Gaussian tail through the grid boundary")]
    BoundaryClipping { q: Vec<f64>, tail: f64 },

    #[error("spectral mass {mass:e} in the top eighth of wavenumbers exceeds {limit:e}")]
    SpectralUnderresolution { mass: f64, limit: f64 },

    #[error("Wigner transform imaginary residue {0:e} too large")]
    ImaginaryResidueTooLarge(f64),

    #[error("smoothed density reaches {0:e} < -1e-6; Wigner input is under-resolved")]
    NegativeAfterSmoothing(f64),

    #[error("thresholding discarded mass {0:e} > 1e-3")]
    ExcessiveTruncation(f64),

    #[error("entropic solver did not certify gap {gap:e} <= {tol:e} within {iterations} iterations")]
    NonConvergence { gap: f64, tol: f64, iterations: usize },

    #[error("ensembles do not share provenance: {0}")]
    ProvenanceMismatch(String),

    #[error("support of size {0} exceeds the brute-force cap of 4")]
    TooLarge(usize),

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("unsupported dimension d = {0} (phase-space transforms handle d = 1)")]
    UnsupportedDimension(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
