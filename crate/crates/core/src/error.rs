use std::path::PathBuf;

use crate::corpus::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Input,
    Io,
    Runtime,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Input => 3,
            Category::Io => 4,
            Category::Runtime => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Input => "input",
            Category::Io => "io",
            Category::Runtime => "runtime",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty manifest")]
    EmptyManifest,

    #[error("labels not dense for {domain} domain: missing label(s) {missing:?}")]
    LabelsNotDense { domain: String, missing: Vec<usize> },

    #[error("cannot decode image {path}: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("image smaller than kernel: image {image_h}x{image_w}, kernel {kernel_h}x{kernel_w}")]
    ImageTooSmall {
        image_h: usize,
        image_w: usize,
        kernel_h: usize,
        kernel_w: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unrecognized {0} format")]
    UnrecognizedFormat(&'static str),

    #[error("{what} version mismatch: expected {expected}, found {found}")]
    VersionMismatch {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {0} file")]
    Truncated(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty target set")]
    EmptyTargetSet,

    #[error("calibration fingerprint does not match filter bank")]
    FingerprintMismatch,

    #[error("descriptor layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("empty source table")]
    EmptySource,

    #[error("no neighbor count for target {0}")]
    MissingCount(SampleId),

    #[error("sample {0} not found")]
    UnknownSample(SampleId),

    #[error("duplicate sample {0}")]
    DuplicateSample(SampleId),

    #[error("probabilities for {id} sum to {sum}, not 1")]
    NotNormalized { id: SampleId, sum: f64 },

    #[error("invalid probability vector for {id}: {msg}")]
    InvalidProbabilities { id: SampleId, msg: String },

    #[error("iteration limit {0} reached")]
    IterationLimit(usize),

    #[error("empty neighbor set for target {0}")]
    EmptyNeighborSet(SampleId),

    #[error("training diverged at batch {batch}: loss {loss}")]
    Divergence { batch: usize, loss: f64 },

    #[error("trainer failed: {0}")]
    Trainer(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("describing {id}: {source}")]
    Describe {
        id: SampleId,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Io { .. } => Category::Io,
            Error::Config(_) => Category::Usage,
            Error::Divergence { .. } | Error::Trainer(_) | Error::IterationLimit(_) => {
                Category::Runtime
            }
            Error::Describe { source, .. } => source.category(),
            _ => Category::Input,
        }
    }
}
