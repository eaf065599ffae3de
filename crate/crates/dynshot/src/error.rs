use thiserror::Error;

/// Errors produced by graph construction, training, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is frozen; no new nodes may be added")]
    FrozenGraph,
    #[error("node {0} does not belong to this graph")]
    ForeignNode(String),
    #[error("unfed input node {0}")]
    UnfedInput(String),
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("parameter `{name}` already registered with shape {registered:?}, requested {requested:?}")]
    ParamShapeMismatch {
        name: String,
        registered: Vec<usize>,
        requested: Vec<usize>,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("initializer for `{name}` supplied {given} values, shape {shape:?} needs {needed}")]
    BadInitializer {
        name: String,
        shape: Vec<usize>,
        given: usize,
        needed: usize,
    },
    #[error("label must be 0 or 1, got {0}")]
    LabelOutOfRange(f64),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("class too small for relational stage: need at least {need} examples, have {have}")]
    ClassTooSmall { need: usize, have: usize },
    #[error("wrong assembled model; consult cache (model expects {expected} examples, got {got})")]
    WrongModelSize { expected: usize, got: usize },
    #[error("optimizer state shape drift for `{name}`: registry has {registry} entries, state has {state}")]
    StateShapeDrift {
        name: String,
        registry: usize,
        state: usize,
    },
    #[error("empty evaluation")]
    EmptyEvaluation,
    #[error("non-finite value produced at {0}")]
    NonFinite(String),
    #[error("{path}:{line}: {msg}")]
    DataFormat {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("too few classes: {0}")]
    TooFewClasses(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 2 usage, 3 data/IO, 4 numeric, 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::DataFormat { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Manifest(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
