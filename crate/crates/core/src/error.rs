use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate axis `{0}`")]
    DuplicateAxis(String),

    #[error("axis `{0}` must have size >= 1")]
    EmptyAxis(String),

    #[error("data length {got} does not match the shape (expected {expected})")]
    DataLength { expected: usize, got: usize },

    #[error("axis `{name}` has size {expected} but the operand has size {got}")]
    AxisSize {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("no axis named `{0}`")]
    UnknownAxis(String),

    #[error("inner product needs exactly one unmatched axis, found {0}")]
    UnmatchedAxes(usize),

    #[error("expected a 1-axis tensor, got {0} axes")]
    NotAVector(usize),

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("not a probability distribution: {0}")]
    NotNormalized(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("action {0} already expanded")]
    AlreadyExpanded(usize),

    #[error("the root has no visited children")]
    NoVisitedChildren,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
