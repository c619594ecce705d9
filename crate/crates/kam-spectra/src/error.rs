use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum KamError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shift by {0} leaves an empty domain")]
    EmptyShift(String),

    #[error("pointwise product over disjoint domains")]
    EmptyProduct,

    #[error("degenerate spectrum: |gap| = {gap:.3e} below floor {floor:.3e} at {witness}")]
    DegenerateSpectrum {
        gap: f64,
        floor: f64,
        witness: String,
    },

    #[error("transform pole: omega.n too close to Z + 1/2 at n = {0}")]
    PoleProximity(String),

    #[error("invalid diagonal offset: {0}")]
    InvalidOffset(String),

    #[error("invalid norm loss: delta = {delta} must lie in (0, {alpha})")]
    InvalidLoss { delta: f64, alpha: f64 },

    #[error("infinity norm requested for a non-diagonal operator")]
    NotDiagonal,

    #[error("not invertible by Neumann series: |X - I| = {norm:.3e} >= {threshold:.3e}")]
    NotInvertibleByNeumann { norm: f64, threshold: f64 },

    #[error("Neumann series failed to contract within {terms} terms")]
    SeriesDivergence { terms: usize },

    #[error("dense export too large: side {side} exceeds {max}")]
    DenseTooLarge { side: usize, max: usize },

    #[error("matrix not symmetric: max asymmetry {0:.3e}")]
    NotSymmetric(f64),

    #[error("dense eigensolver did not converge within {0} sweeps")]
    OracleFailure(usize),

    #[error("ambiguous pairing: sites {first} and {second} both claim eigenpair {pair}")]
    PairingAmbiguity {
        first: String,
        second: String,
        pair: usize,
    },

    #[error("degenerate column: |U e_n| = {0:.3e} below floor")]
    DegenerateColumn(f64),

    #[error("rigor violation at step {step}: {what}")]
    RigorViolation { step: usize, what: String },

    #[error("flat transform: inf |h'| = {0:.3e} too small")]
    FlatTransform(f64),

    #[error("exact resonance: omega.k integer at k = {0}")]
    Resonance(String),

    #[error("profile evaluation failed: {0}")]
    Profile(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, KamError>;
