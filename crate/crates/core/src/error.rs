use thiserror::Error;

/// Error type shared across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain type failed its construction invariants.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    /// Two grids (or tensors) that must agree do not.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// The iterative solver ran out of iterations.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e}, tolerance {tolerance:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// The linear system has no unknowns to solve for.
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    /// Random-field synthesis failed (covariance embedding not PSD).
    #[error("random field generation failed: {0}")]
    FieldGeneration(String),

    /// Sample generation failed for a specific dataset index.
    #[error("sample {index} failed: {source}")]
    Generation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A persisted file does not match the expected binary format.
    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Checkpoint contents disagree with the model being restored.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
