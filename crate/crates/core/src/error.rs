use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("base {0} is not a prime >= 2")]
    InvalidBase(u32),
    #[error("base mismatch: {0} vs {1}")]
    BaseMismatch(u32, u32),
    #[error("coefficient {coeff} out of range for base {base}")]
    CoefficientOutOfRange { coeff: u32, base: u32 },
    #[error("zero modulus")]
    ZeroModulus,
    #[error("constant polynomial where degree >= 1 is required")]
    ConstantPolynomial,
    #[error("modulus is reducible")]
    ReducibleModulus,
    #[error("degree violation: {0}")]
    Degree(String),
    #[error("value does not fit the integer encoding: {0}")]
    Overflow(String),
    #[error("no irreducible modulus of degree {m} known for base {b}")]
    NoModulus { b: u32, m: u32 },
    #[error("invalid rule spec: {0}")]
    InvalidSpec(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coordinate outside [0, 1) at the given precision")]
    CoordinateOutOfRange,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-positive diffusion coefficient {value} on element {element}")]
    NonPositiveCoefficient { element: usize, value: f64 },
    #[error("problem is not admissible (kappa = {0} >= 2)")]
    NotAdmissible(f64),
    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
