//! Error type shared by all modules of the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by mesh generation, coefficient construction, solvers and
/// the experiment harness.
#[derive(Debug)]
pub enum Error {
    /// A size cap was exceeded (vertex/element counts, refinement budget).
    Capacity(String),
    /// Invalid or degenerate geometry (shapes, cell boxes, point location).
    Geometry(String),
    /// Invalid mesh topology or element quality.
    Mesh(String),
    /// A coefficient violates its ellipticity bounds.
    Ellipticity(String),
    /// Invalid experiment or solver configuration.
    Config(String),
    /// Invalid input to a numerical routine.
    Input(String),
    /// An iterative solver failed to converge or broke down.
    Solver {
        message: String,
        iterations: usize,
        residual: f64,
    },
    /// The reference field of a relative error is (numerically) zero.
    DegenerateReference(String),
    /// I/O failure, annotated with the offending path.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Capacity(msg) => write!(f, "capacity exceeded: {msg}"),
            Error::Geometry(msg) => write!(f, "geometry error: {msg}"),
            Error::Mesh(msg) => write!(f, "mesh error: {msg}"),
            Error::Ellipticity(msg) => write!(f, "ellipticity violation: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Solver {
                message,
                iterations,
                residual,
            } => write!(
                f,
                "solver error: {message} (iterations {iterations}, residual {residual:.3e})"
            ),
            Error::DegenerateReference(msg) => write!(f, "degenerate reference: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
