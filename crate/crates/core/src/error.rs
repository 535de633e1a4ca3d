//! Error type shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Consecutive layers disagree on shapes, or a layer spec is malformed.
    #[error("layer {layer}: {message}")]
    BadModelSpec { layer: usize, message: String },

    /// A forward/backward/update pass produced a non-finite value.
    #[error("non-finite value in layer {layer} during {stage}")]
    NumericFailure { layer: usize, stage: &'static str },

    /// Inputs whose shapes do not match the network.
    #[error("batch mismatch: {0}")]
    BadBatch(String),

    /// The speedup ratio cannot even cover the forward pass.
    #[error(
        "infeasible budget: rho {rho} leaves {budget} ns for the backward pass; \
         minimum achievable rho is {min_rho:.4}"
    )]
    InfeasibleBudget { rho: f64, budget: i64, min_rho: f64 },

    /// Importance evaluation requires an update for every trainable tensor.
    #[error("missing weight update for tensor {tensor}")]
    MissingUpdate { tensor: u32 },

    #[error("exhaustive search refused: {n} tensors exceeds the 2^20 guard")]
    TooManyTensors { n: usize },

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("dataset error: {0}")]
    BadDataset(String),

    #[error("reports are not comparable: {0}")]
    IncomparableReports(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
