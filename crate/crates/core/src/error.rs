use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("invalid data offsets: {0}")]
    InvalidOffsets(String),

    #[error("unsupported dtype {dtype:?} for tensor {name:?} (only F32 is accepted)")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("tensor {0:?} contains non-finite values")]
    NonFinite(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("invalid tensor {name:?}: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("manifest: epochs strictly increasing required, got {prev} then {next}")]
    NonIncreasingEpochs { prev: u64, next: u64 },

    #[error("manifest: unresolvable path {}", .0.display())]
    UnresolvablePath(PathBuf),

    #[error("no tensor matches {0:?}")]
    NoMatch(String),

    #[error("pattern {pattern:?} matches several tensors: {names:?}")]
    AmbiguousLayer { pattern: String, names: Vec<String> },

    #[error("layer {layer:?} missing from {}", path.display())]
    LayerMissing { layer: String, path: PathBuf },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("spectrum is already center-shifted")]
    AlreadyShifted,

    #[error("spectrum must be center-shifted first")]
    NotShifted,

    #[error("degenerate kernel: size {0} has a single radius class, band analysis is undefined")]
    DegenerateKernel(usize),

    #[error("degenerate initialization: initial high-band energy is zero, SSR undefined")]
    DegenerateInitialization,

    #[error("grid of {n} points aliases frequency {k} (need at least {})", 4 * .k)]
    Aliasing { n: usize, k: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 2 input, 3 degenerate math, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateKernel(_) | Error::DegenerateInitialization => 3,
            Error::Divergence { .. } => 4,
            _ => 2,
        }
    }
}
