pub mod error;
pub mod expr;
pub mod homotopy;
pub mod logic;
pub mod minlp;
pub mod nlp;
pub mod scenarios;
pub mod transcription;

pub use error::{EvalError, ModelError, NlpError, SolveError};
pub use expr::{Expr, Interval, Scalar};
pub use nlp::{solve_nlp, IpmOptions, NlpProblem, NlpSolution, NlpStatus};
