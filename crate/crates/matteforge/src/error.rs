use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatteError {
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    Shape {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("config error: {0}")]
    Config(String),
}

impl MatteError {
    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        MatteError::Shape {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MatteError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            MatteError::InvalidArgument(_) | MatteError::Config(_) => 1,
            MatteError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, MatteError>;
