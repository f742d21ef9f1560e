use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every stage of the pipeline.
///
/// Input problems (`Input`, `Schema`, `Io`) map to CLI exit status 1; the
/// numerical variants map to exit status 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input at {path}: {message}")]
    Input { path: String, message: String },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("truncation too short for channel {channel}: need at least {needed} sites, got {got}")]
    TruncationTooShort {
        channel: String,
        needed: usize,
        got: usize,
    },

    #[error("lambda = {lambda} is within {tol:e} of central eigenvalue #{index} ({eigenvalue})")]
    ResolventPole {
        index: usize,
        eigenvalue: f64,
        lambda: num_complex::Complex64,
        tol: f64,
    },

    #[error("disconnected band union: gap between {left} and {right}")]
    DisconnectedBands { left: f64, right: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("band-edge singularity: {0}")]
    BandEdge(String),

    #[error("near-pole evaluation at omega = {omega}: |det T| = {det:e}")]
    NearPole {
        omega: num_complex::Complex64,
        det: f64,
    },

    #[error("root polishing did not converge in [{lo}, {hi}]")]
    RootPolish { lo: f64, hi: f64 },

    #[error("residue anomaly at omega = {omega}: {message}")]
    ResidueAnomaly {
        omega: num_complex::Complex64,
        message: String,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("reconstruction failed at k = {k}: {message}")]
    Reconstruction { k: usize, message: String },

    #[error("quadrature quality: {0}")]
    Quadrature(String),

    #[error("kernel assembly: {0}")]
    KernelAssembly(String),

    #[error("ill-posed Marchenko system for k = {k}: {message}")]
    IllPosed { k: usize, message: String },

    #[error("inconsistent dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub fn input(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by malformed or unreadable input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input { .. }
                | Error::Schema { .. }
                | Error::Io { .. }
                | Error::TruncationTooShort { .. }
                | Error::DisconnectedBands { .. }
                | Error::Unsupported(_)
        )
    }
}
