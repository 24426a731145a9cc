use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("increment law has non-zero mean {0:e}")]
    NonZeroMean(f64),
    #[error("increment law is degenerate (zero variance)")]
    DegenerateLaw,
    #[error("bad probabilities: {0}")]
    BadProbabilities(String),
    #[error("support has no lattice structure: {0}")]
    NotLattice(String),
    #[error("argument outside domain: {0}")]
    DomainError(String),
    #[error("quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },
    #[error("state {0} is not on the walk lattice")]
    OffLattice(f64),
    #[error("truncated expectations decrease along the ladder ({0})")]
    NonMonotone(String),
    #[error("law is not skip-free downward: {0}")]
    NotSkipFree(String),
    #[error("harmonic table does not cover state {0}")]
    InsufficientTable(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("operation requires a finite-support lattice law")]
    UnsupportedLaw,
    #[error("y - x = {0} is not on the lattice hbar*Z + n*a")]
    LatticeMismatch(f64),
    #[error("interval [{lo}, {hi}] exceeds harmonic table range [0, {max}]")]
    TableCoverage { lo: f64, hi: f64, max: f64 },
    #[error("the two kappa integrals disagree: {first} vs {second}")]
    KappaDisagreement { first: f64, second: f64 },
    #[error("series terms decay too slowly (fitted exponent {0:.3})")]
    SlowDecay(f64),
    #[error("config error: {0}")]
    Config(String),
    #[error("cell (n={n}, x={x}, y={y}, v={v}): {source}")]
    Cell {
        n: u64,
        x: f64,
        y: f64,
        v: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
