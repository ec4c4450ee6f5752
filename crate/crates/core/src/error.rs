use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample set")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("non-finite state at step {step}, particle {particle}")]
    NonFiniteState { step: usize, particle: usize },
    #[error("eta decreased at step {step}, particle {particle}")]
    DecreasingEta { step: usize, particle: usize },
    #[error("riccati blow-up: U(t) = {u} <= 0 at t = {t}")]
    RiccatiBlowUp { t: f64, u: f64 },
    #[error("CFL bound violated: {bound} = {value} > {limit}")]
    Cfl { bound: String, value: f64, limit: f64 },
    #[error("density mass drift {0} exceeds 1e-3")]
    MassDrift(f64),
    #[error("no control authority (lambda = 0) but particle {particle} left the continuation region at t = {t}")]
    NoControlAuthority { t: f64, particle: usize },
    #[error("reflection did not converge at t = {t}: {violators} violators, worst s = {worst}")]
    Projection { t: f64, violators: usize, worst: f64 },
    #[error("initial particle {particle} outside the continuation region (s = {s})")]
    OutsideContinuation { particle: usize, s: f64 },
    #[error("schema: {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
