use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("time-index gap: expected {expected}, got {actual}")]
    TimeIndexGap { expected: i64, actual: i64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("a window needs at least one frame")]
    EmptyWindow,

    #[error("cannot compose elements of different groups ({0} and {1})")]
    MixedGroups(String, String),
    #[error("group action incompatible with grid: {0}")]
    IncompatibleGroup(String),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("cannot parse group element `{0}`")]
    ParseElement(String),

    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("non-finite prediction at rollout step {step}")]
    NonFinitePrediction { step: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("explicit stability bound violated: dt = {dt} > {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("solver produced a non-finite state at substep {step}")]
    BlowUp { step: usize },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("training diverged at update {update}: loss {loss} exceeds 1e3 x initial {initial}")]
    Diverged { update: usize, loss: f64, initial: f64 },

    #[error("misaligned trajectories: {0}")]
    Misaligned(String),
    #[error("nothing to aggregate")]
    EmptyInput,
}
