use thiserror::Error;

/// Length mismatch between a vector and the shape a family or state expects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch for {what}: expected {expected}, got {actual}")]
pub struct ShapeError {
    pub what: String,
    pub expected: usize,
    pub actual: usize,
}

impl ShapeError {
    pub fn new(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Self {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn check(what: &str, expected: usize, actual: usize) -> Result<(), Self> {
        if expected == actual {
            Ok(())
        } else {
            Err(Self::new(what, expected, actual))
        }
    }
}

/// Failures turning index-sequence text or structure into an expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("slot index {index} out of range (M = {slots})")]
    IndexOutOfRange { index: usize, slots: usize },
    #[error("slot {slot} has arity {arity} but is followed by {found}")]
    Arity {
        slot: usize,
        arity: usize,
        found: String,
    },
    #[error("grammar error at item {position}: {message}")]
    Grammar { position: usize, message: String },
}

/// Invalid scenario configuration; `key` is the path of the offending entry.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

/// A non-finite value appeared in the controller update.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("numeric divergence in slot {slot} ({quantity}){}", step.map(|t| format!(" at step {t}")).unwrap_or_default())]
pub struct DivergenceError {
    pub slot: usize,
    pub quantity: &'static str,
    pub step: Option<u64>,
}

/// Errors from evaluating feedback errors, gradients, and control steps.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("pair {pair}: {source}")]
    Pair {
        pair: usize,
        #[source]
        source: Box<FeedbackError>,
    },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error("probe set is empty")]
    NoProbes,
}

impl FeedbackError {
    pub(crate) fn at_pair(self, pair: usize) -> Self {
        FeedbackError::Pair {
            pair,
            source: Box::new(self),
        }
    }

    /// The divergence inside this error, if any.
    pub fn divergence(&self) -> Option<&DivergenceError> {
        match self {
            FeedbackError::Divergence(d) => Some(d),
            FeedbackError::Pair { source, .. } => source.divergence(),
            _ => None,
        }
    }
}

/// Errors surfaced by a simulation run.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Step {
        step: u64,
        #[source]
        source: FeedbackError,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
}

impl SimError {
    pub fn is_divergence(&self) -> bool {
        match self {
            SimError::Step { source, .. } => source.divergence().is_some(),
            SimError::NonFiniteLoss { .. } => true,
            SimError::Config(_) => false,
        }
    }
}
