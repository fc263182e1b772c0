use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition (out of range, wrong shape, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A generated sample ended up too small to be usable.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Geometry does not determine a unique transform (too few or collinear points).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Non-finite values or a diverging computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A malformed file (PLY/XYZ/weights/manifest).
    #[error("format error: {0}")]
    Format(String),

    /// Configuration problems, one message per offending key.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
