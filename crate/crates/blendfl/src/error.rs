//! Crate-wide error type.

/// Errors raised by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix or layer dimension did not match what an operation expected.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A cached forward trace does not belong to the network or batch it was
    /// presented with (wrong depth, wrong dims, or parameters changed since
    /// the forward pass).
    #[error("forward trace mismatch: {0}")]
    Trace(String),

    /// A non-finite value appeared where the numeric contract forbids it.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Labels or features violate the data contract (label out of range,
    /// duplicate ids, malformed record, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The requested partition is infeasible or produced an inconsistent
    /// assignment.
    #[error("partition error: {0}")]
    Partition(String),

    /// A class is too small to be represented in every holdout split.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Conflicting fragment assignments discovered while building the
    /// alignment table.
    #[error("alignment integrity error: {0}")]
    Integrity(String),

    /// A client or server was driven outside the allowed message order.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A staged feature id could not be resolved in the alignment table.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Parameter vectors with incompatible layouts were aggregated.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// The validation set cannot support the requested score.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A metric precondition failed (single-class labels, no positives, ...).
    #[error("metric error: {0}")]
    Metric(String),

    /// The client has no model head compatible with the sample.
    #[error("no compatible head: {0}")]
    Capability(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A protocol run could not start or had to abort.
    #[error("run error: {0}")]
    Run(String),

    /// A checkpoint could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
