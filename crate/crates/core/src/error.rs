use std::path::PathBuf;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}`{}", step_suffix(*.step))]
    NonFinite { op: String, step: Option<usize> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward seed must be a scalar, got shape {0:?}")]
    SeedNotScalar(Vec<usize>),

    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,

    #[error("loss is not deterministic: {first} vs {second} at the same parameter")]
    NonDeterministic { first: f64, second: f64 },

    #[error("element {element} inverted (det F = {det:e})")]
    ElementInverted { element: usize, det: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("surface element {element} has no support on the grid (Z = {z:e}); body left the domain")]
    LeftGrid { element: usize, z: f64 },

    #[error("training diverged at iteration {iteration}: loss {loss:e} vs initial {initial:e}")]
    Diverged { iteration: usize, loss: f64, initial: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("episode unstable at step {step}: {source}")]
    Unstable {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a step index to errors raised inside an unrolled step.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            Error::NonFinite { op, step: None } => Error::NonFinite { op, step: Some(step) },
            e @ Error::Unstable { .. } => e,
            e @ Error::NonFinite { .. } => e,
            other => Error::Unstable { step, source: Box::new(other) },
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
