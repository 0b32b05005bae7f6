use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // taxonomy
    #[error("taxonomy parse error at line {line}: {msg}")]
    TaxonomySyntax { line: usize, msg: String },
    #[error("orphan node: {0}")]
    OrphanNode(String),
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("node {node} has parent {parent} at the wrong level")]
    WrongParentLevel { node: String, parent: String },
    #[error("unknown parent {parent} for node {node}")]
    UnknownParent { node: String, parent: String },
    #[error("{node} at level {level} has no children")]
    Childless { node: String, level: usize },
    #[error("leaf count {found} does not match declared {declared}")]
    LeafCountMismatch { declared: usize, found: usize },
    #[error("invalid level {0}")]
    InvalidLevel(usize),
    #[error("unknown node {index} at level {level}")]
    UnknownNode { level: usize, index: usize },
    #[error("unknown leaf: {0}")]
    UnknownLeaf(String),
    #[error("inconsistent label path ({l1}, {l2}, {l3})")]
    InvalidPath { l1: usize, l2: usize, l3: usize },

    // vectors and banks
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported bank version {0}")]
    UnsupportedVersion(u32),
    #[error("taxonomy mismatch")]
    TaxonomyMismatch,
    #[error("truncated stream")]
    Truncated,
    #[error("malformed bank: {0}")]
    MalformedBank(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    // retrieval and voting
    #[error("empty bank")]
    EmptyBank,
    #[error("invalid k: {0}")]
    InvalidK(usize),
    #[error("empty vote")]
    EmptyVote,
    #[error("no bank support under {parent} at level {level}")]
    NoSupport { level: usize, parent: String },

    // metrics
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no samples")]
    NoSamples,

    // training
    #[error("class {0} has zero count")]
    ZeroCount(usize),
    #[error("sample {0} is unlabeled")]
    Unlabeled(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated
        } else {
            Error::Io(e)
        }
    }
}
