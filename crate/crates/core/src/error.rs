use std::fmt;

/// Constraint families of the near-field filter design problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintClass {
    Passband,
    Transition,
    Stopband,
    /// Trust region on the tap norm.
    TapNorm,
}

impl fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ConstraintClass::Passband => "passband",
            ConstraintClass::Transition => "transition",
            ConstraintClass::Stopband => "stopband",
            ConstraintClass::TapNorm => "tap-norm",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("user {user} has a zero effective channel column")]
    ZeroColumn { user: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("ill-conditioned filter autocorrelation: {clamped} eigenvalue(s) below {threshold:e} x lambda_max")]
    IllConditioned { clamped: usize, threshold: f64 },

    #[error("no users fall inside the selected passband")]
    EmptyPassband,

    #[error("design infeasible: {class} constraints violated by {violation:e}")]
    Infeasible {
        class: ConstraintClass,
        violation: f64,
    },

    #[error("non-monotone SCA step at iteration {iteration}: t went from {previous:e} to {current:e}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("cone solver failed: {0}")]
    Solver(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
