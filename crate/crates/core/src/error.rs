use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration ({x}, {y}) is outside the map bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("no free space satisfies a clearance margin of {margin}")]
    EmptyFreeSpace { margin: f64 },
    #[error("no subdomain contains free space")]
    NoFreeSubdomain,
    #[error("degenerate subdomain box")]
    InvalidSubdomain,
    #[error("non-finite value in {0}")]
    Numerical(&'static str),
    #[error("start configuration is not reachable from any source")]
    Unreachable,
    #[error("start configuration is in collision")]
    InvalidStart,
    #[error("goal configuration is in collision")]
    InvalidGoal,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
