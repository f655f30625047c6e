use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage names used to tag propagated errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Split,
    Patches,
    Whitening,
    Dictionary,
    Encoding,
    Pooling,
    Classifier,
    Evaluate,
    ModelIo,
    Config,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Patches => "patches",
            Stage::Whitening => "whitening",
            Stage::Dictionary => "dictionary",
            Stage::Encoding => "encoding",
            Stage::Pooling => "pooling",
            Stage::Classifier => "classifier",
            Stage::Evaluate => "evaluate",
            Stage::ModelIo => "model-io",
            Stage::Config => "config",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corpus at {0} contains no readable images")]
    EmptyCorpus(PathBuf),
    #[error("no subject has at least {needed} images")]
    NoSatisfiableSubject { needed: usize },
    #[error("image {rows}x{cols} is smaller than patch side {patch}")]
    ImageTooSmall { rows: usize, cols: usize, patch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} patches to estimate a {dim}x{dim} covariance, got {got}; sample more patches")]
    TooFewPatches { needed: usize, got: usize, dim: usize },
    #[error("covariance eigenvalue {0:e} plus regularizer is not positive; increase eps_zca")]
    SingularCovariance(f64),
    #[error("k-means needs at least {k} distinct points, got {got}")]
    TooFewPoints { k: usize, got: usize },
    #[error("matrix logarithm undefined for {cell}: {reason}")]
    NotSpd { cell: String, reason: String },
    #[error("linear system residual {residual:e} exceeds tolerance in column {column}")]
    Residual { column: usize, residual: f64 },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
