use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("point has dimension {got}, expected at least {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(&'static str),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("big-M value {m} does not bound the constraint (interval maximum {bound})")]
    InvalidBigM { m: f64, bound: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NlpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid initial guess: {0}")]
    InvalidGuess(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("{count} binary variables exceed the enumeration cap {cap}")]
    CapExceeded { count: usize, cap: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("outer iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("unrecoverable NLP failure: {0}")]
    NlpFailure(String),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
