use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no convergence after {iterations} iterations (final residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no physical refraction path: {0}")]
    NoPath(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } | Error::Format(_) | Error::Image(_) | Error::Shape(_) => 3,
            Error::Numeric(_) | Error::NonConvergence { .. } | Error::NoPath(_) => 4,
        }
    }
}
