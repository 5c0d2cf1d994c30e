use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sink segment #{index} ({side:?}, center {center}, length {length}) does not snap to the nodes of a {n}x{n} grid")]
    NonSnappingSegment {
        index: usize,
        side: crate::grid::Side,
        center: f64,
        length: f64,
        n: usize,
    },

    #[error("invalid boundary specification: {0}")]
    InvalidBoundary(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverNotConverged { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("edge {0} lies on the Dirichlet boundary")]
    DirichletEdge(usize),

    #[error("MMA subproblem infeasible: {0}")]
    InfeasibleSubproblem(String),

    #[error("invalid configuration at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
