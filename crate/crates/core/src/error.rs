use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed WAV data: {0}")]
    Format(String),

    #[error("unsupported audio encoding: {0}")]
    UnsupportedCodec(String),

    #[error("audio contains no samples: {0}")]
    EmptyAudio(String),

    #[error("sample rate mismatch: {signal} Hz signal vs {noise} Hz interference")]
    RateMismatch { signal: u32, noise: u32 },

    #[error("interference signal has zero power")]
    DegenerateNoise,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("utterance has no feature frames")]
    EmptyUtterance,

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("corrupt or truncated container: {0}")]
    Container(String),

    #[error("unsupported container version {found}; this build reads version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("sample sizes differ: {0} vs {1}")]
    SampleSize(usize, usize),

    #[error("manifest validation failed:\n  {}", .0.join("\n  "))]
    Manifest(Vec<String>),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error stems from bad user input (files, manifests, flags)
    /// rather than a failure while computing.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::File { source, .. } | Error::Stage { source, .. } => source.is_input_error(),
            Error::Divergence { .. } | Error::InsufficientData(_) => false,
            _ => true,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn in_file(self, path: impl Into<PathBuf>) -> Result<T>;
    fn in_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn in_file(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| e.in_file(path))
    }

    fn in_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
