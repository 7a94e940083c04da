use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported cell type: {0}")]
    UnsupportedCellType(String),

    #[error("triangle {triangle} references out-of-range vertex {vertex}")]
    IndexOutOfRange { triangle: usize, vertex: usize },

    #[error("triangle {0} repeats a vertex")]
    RepeatedVertex(usize),

    #[error("non-manifold edge ({0}, {1}): shared by more than two triangles")]
    NonManifoldEdge(usize, usize),

    #[error("degenerate triangle {index}: {msg}")]
    DegenerateTriangle { index: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
