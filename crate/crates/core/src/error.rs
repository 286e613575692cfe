use thiserror::Error;

use crate::coords::CoordSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0} is not a prime base")]
    NotPrime(u32),
    #[error("polynomials over different fields (base {0} vs {1})")]
    BaseMismatch(u32, u32),
    #[error("division by the zero polynomial")]
    ZeroDivisor,
    #[error("irreducibility is undefined for constant polynomials")]
    ConstantPolynomial,
    #[error("invalid generating vector: {0}")]
    InvalidGeneratingVector(String),
    #[error("no modulus tabulated for base {base}, degree {m}")]
    NoModulus { base: u32, m: u32 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension {dim} is not divisible by the interlacing factor {alpha}")]
    NotDivisible { dim: usize, alpha: usize },
    #[error("precision {precision} is out of range for base {base} (point set has {m} digits)")]
    Precision { precision: u32, base: u32, m: u32 },
    #[error("Bernoulli degree {0} exceeds the precomputed range")]
    BernoulliDegree(usize),
    #[error("coordinate {0} was not assigned")]
    MissingCoordinate(u32),
    #[error("coordinate set {0} exceeds the inclusion-exclusion cap of {1}")]
    SetTooLarge(CoordSet, usize),
    #[error("{u} is not a subset of {v}")]
    NotSubset { u: CoordSet, v: CoordSet },
    #[error("weights: {0}")]
    Weights(String),
    #[error("decay is not known for {0} weights; declare it explicitly")]
    UndeclaredDecay(&'static str),
    #[error("operation needs finite support but the weights have infinitely many positive entries")]
    InfiniteSupport,
    #[error("planner: {0}")]
    Plan(String),
    #[error("planner cap reached: {0}")]
    CapExceeded(String),
    #[error("need at least {need} replications, got {got}")]
    TooFewReplications { need: usize, got: usize },
    #[error("integrand evaluation failed on {set}: {msg}")]
    Integrand { set: CoordSet, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
