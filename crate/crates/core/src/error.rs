//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("id out of vocab: {id} (vocab len {len})")]
    IdOutOfVocab { id: u32, len: usize },
    #[error("duplicate surface: {0:?}")]
    DuplicateSurface(String),
    #[error("surface too short: {0:?} (min 2 bytes)")]
    SurfaceTooShort(String),
    #[error("embedding dimension mismatch: got {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("context overflow: sequence of {needed} tokens exceeds context {context}{detail}")]
    ContextOverflow {
        needed: usize,
        context: usize,
        detail: String,
    },
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("empty prefix: at least one conditioning position is required")]
    EmptyPrefix,
    #[error("empty gradient mask")]
    EmptyMask,
    #[error("gradient mask position {pos} outside prefix of length {len}")]
    MaskOutOfRange { pos: usize, len: usize },
    #[error("corpus too short: {got} tokens, need at least {need}")]
    CorpusTooShort { got: usize, need: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("manifest shape mismatch for tensor {name}: header says {header:?}, config implies {expected:?}")]
    ManifestShapeMismatch {
        name: String,
        header: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("template pattern must contain the query placeholder {{}} exactly once: {0:?}")]
    BadTemplatePattern(String),
    #[error("duplicate template name: {0:?}")]
    DuplicateTemplateName(String),
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("unknown template set: {0:?}")]
    UnknownTemplateSet(String),
    #[error("insertion index {z} out of range for sequence of length {len}")]
    InsertOutOfRange { z: usize, len: usize },
    #[error("adversarial token sequence is empty")]
    EmptyAdversarial,
    #[error("adversarial token id {0} is not a base-vocabulary token")]
    AdversarialTokenNotBase(u32),
    #[error("target token id {0} is outside the output classes")]
    TargetOutsideHead(u32),
    #[error("context overflow under template {template:?}: {source}")]
    TemplateOverflow {
        template: String,
        #[source]
        source: Box<Error>,
    },
    #[error("position {0} outside adversarial segment of length {1}")]
    PositionOutsideSegment(usize, usize),
    #[error("optimization diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
    #[error("from-oracle init requires k=1, got k={0}")]
    OracleInitNeedsSingleToken(usize),
    #[error("token absent: {0:?}")]
    TokenAbsent(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("bundle vector length mismatch: {got} embeddings for {tokens} tokens")]
    BundleVectorMismatch { got: usize, tokens: usize },
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("need at least 3 (distance, trr) pairs, got {0}")]
    TooFewPairs(usize),
    #[error("probe transport failure in strict mode: {0}")]
    StrictProbeFailure(String),
    #[error("unknown scenario: {0:?}")]
    UnknownScenario(String),
    #[error("io error{}: {source}", path.as_ref().map(|p| format!(" ({p})")).unwrap_or_default())]
    Io {
        path: Option<String>,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { path: None, source }
    }
}
