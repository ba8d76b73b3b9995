use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("invalid Pauli string {0:?}: only the characters I, X, Y, Z are accepted")]
    InvalidPauli(String),

    #[error("qubit count {0} is outside the supported range 1..=64")]
    UnsupportedQubitCount(usize),

    #[error("Kossakowski matrix is not Hermitian (max deviation {deviation:e})")]
    NonHermitianKossakowski { deviation: f64 },

    #[error("Kossakowski matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("identity Pauli term present in the {0}")]
    IdentityTermPresent(&'static str),

    #[error("inconsistent model: {0}")]
    InconsistentModel(String),

    #[error("evolution did not converge: {0}")]
    NonConvergent(String),

    #[error("{what} = {value} exceeds the configured cap {cap}")]
    CapExceeded {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("shot budget overflow: {required} shots required, budget is {budget}")]
    ShotBudgetOverflow { required: f64, budget: u64 },

    #[error("Chebyshev degree r = {0} is too small (need r >= 2)")]
    DegreeTooSmall(usize),

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error(
        "probe selection stalled at rank {rank} of {target} after {attempts} attempted probes"
    )]
    RankStalled {
        rank: usize,
        target: usize,
        attempts: usize,
    },

    #[error("matrix is singular")]
    Singular,

    #[error("SPAM retention must lie in (0, 1], got {0}")]
    ZeroRetention(f64),

    #[error("kappa = {kappa} is outside 2..={n}")]
    KappaOutOfRange { n: usize, kappa: usize },

    #[error("the identity Pauli is not a valid input here")]
    IdentityInput,

    #[error("probe locality {k} exceeds the shadow locality cap {cap}")]
    LocalityCapExceeded { k: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergent(_) | Error::RankStalled { .. } | Error::Singular => 3,
            Error::CapExceeded { .. }
            | Error::ShotBudgetOverflow { .. }
            | Error::LocalityCapExceeded { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
