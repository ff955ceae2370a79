use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate neighborhood (collinear or coincident points)")]
    DegenerateNeighborhood,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("no correspondences within {max_dist} m")]
    NoOverlap { max_dist: f64 },
    #[error("rank-deficient point-to-plane system (singular value ratio {ratio:e})")]
    DegenerateSystem { ratio: f64 },
    #[error("scanner sees no part of the workpiece")]
    EmptyView,
    #[error("path point {index}: moving direction parallel to normal")]
    DegenerateFrame { index: usize },
    #[error("path points {index} and {next}: rotations are ~180 degrees apart", next = index + 1)]
    AmbiguousRotation { index: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad files, configs or arguments rather than by the algorithms.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput(_)
                | Error::InvalidParameter(_)
                | Error::Parse { .. }
                | Error::Data(_)
                | Error::InvalidPose(_)
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
