//! Error and warning types shared across the crate.

use serde::Serialize;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// CSV cell that failed to parse. `line` is 1-based and counts the
    /// header, so the first data row is line 2.
    #[error("csv error at line {line}, column `{column}`: {message}")]
    Csv {
        line: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The instrument-treatment cross moment G is numerically singular.
    /// Point estimation is unreliable; Anderson-Rubin inference remains valid.
    #[error(
        "weak identification: condition number of G is {condition:.3e} (limit {limit:.0e}); \
         point estimates are unreliable, use Anderson-Rubin confidence sets"
    )]
    WeakIdentification { condition: f64, limit: f64 },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),
}

impl Error {
    /// Process exit code this error maps to: 2 for statistical degeneracy
    /// where a partial report is still useful, 1 for input/config errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::WeakIdentification { .. } => 2,
            _ => 1,
        }
    }
}

/// Non-fatal events recorded during fitting and estimation. These surface in
/// reports; they never abort a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// A rank-deficient least-squares design was solved with a small ridge
    /// penalty instead.
    RidgeFallback { context: String },
    /// Too few rows for a tree learner; a constant (mean) predictor was used.
    ConstantFallback { context: String },
    /// Estimated conditional variances below the floor were clipped.
    VarianceFloored { count: usize },
    /// First-stage residuals were numerically zero; the F statistic is capped.
    PerfectFirstStage { treatment: usize },
    /// An instrument column is (numerically) constant within a fold.
    DegenerateInstrument { fold: usize, column: usize },
    /// The Bonferroni intersection of per-fold AR sets is empty.
    EmptyIntersection,
    /// All coefficients of the AR quadratic vanished; the set defaults to
    /// the whole line.
    DegenerateFold { fold: usize },
    /// Out-of-sample R-squared had a zero denominator.
    DegenerateR2 { fold: usize, column: usize },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::RidgeFallback { context } => {
                write!(f, "rank-deficient design in {context}; ridge fallback applied")
            }
            Warning::ConstantFallback { context } => {
                write!(f, "too few rows in {context}; constant predictor used")
            }
            Warning::VarianceFloored { count } => {
                write!(f, "{count} conditional variance estimate(s) clipped at the floor")
            }
            Warning::PerfectFirstStage { treatment } => {
                write!(f, "perfect first-stage fit for treatment {treatment}; F capped")
            }
            Warning::DegenerateInstrument { fold, column } => {
                write!(f, "instrument column {column} is constant on fold {fold}")
            }
            Warning::EmptyIntersection => {
                write!(f, "Bonferroni intersection of per-fold AR sets is empty")
            }
            Warning::DegenerateFold { fold } => {
                write!(f, "degenerate AR quadratic on fold {fold}; whole line returned")
            }
            Warning::DegenerateR2 { fold, column } => {
                write!(f, "zero-variance hold-out for R2 on fold {fold}, column {column}")
            }
        }
    }
}
