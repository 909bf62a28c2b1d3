use thiserror::Error;

/// Errors raised by field construction, evaluation and argument validation.
///
/// Solver non-convergence is reported by the solver-specific error types
/// ([`crate::inner::InnerError`], [`crate::outer::OuterError`],
/// [`crate::saddle::SaddleError`]) because those carry the best iterate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field has {found} entries but the grid needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("height {value} in column {column} is outside (-1, 1)")]
    HeightOutOfRange { column: usize, value: f64 },

    #[error("indicator is not a graph in column {column}")]
    NotAGraph { column: usize },

    #[error("density {value} at cell {cell} is outside [0, 1]")]
    IllPosed { cell: usize, value: f64 },

    #[error("volume {volume} is not in (0, {max})")]
    InfeasibleVolume { volume: f64, max: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
