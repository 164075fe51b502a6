use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or geometry mismatch. The message carries both offending shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A non-finite value (NaN or +/-inf) was produced. The message names the
    /// operation so the failing node can be located without a debugger.
    #[error("non-finite value produced by {op}{}", if detail.is_empty() { String::new() } else { format!(" ({detail})") })]
    NonFinite { op: &'static str, detail: String },

    /// Invalid configuration (bad weights, bad dims, unknown keys, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file is malformed or does not match the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A forward pass was not reproducible between two evaluations.
    #[error("determinism violation in {0}: two forward passes disagreed")]
    Determinism(String),

    /// Gradient check failure: analytic and numeric derivatives disagree.
    #[error("gradient check failed for {name}: max relative error {max_rel_err:.3e} (tolerance {tol:.1e})")]
    GradCheck {
        name: String,
        max_rel_err: f64,
        tol: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn non_finite(op: &'static str, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
