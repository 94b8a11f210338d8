use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The tree violates the binary partition-tree requirements.
    #[error("tree structure error: {0}")]
    Structure(String),

    #[error("newick parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Inconsistent observations (shapes, counts, labels).
    #[error("data error: {0}")]
    Data(String),

    #[error("tree leaves and count columns differ: only in tree {only_in_tree:?}, only in counts {only_in_counts:?}")]
    LeafMismatch {
        only_in_tree: Vec<String>,
        only_in_counts: Vec<String>,
    },

    #[error("covariate matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("optimization failed after {iterations} iterations (gradient norm {grad_norm:e}): {message}")]
    Optimization {
        message: String,
        iterations: usize,
        grad_norm: f64,
    },

    /// Malformed or incompatible serialized model.
    #[error("model format error: {0}")]
    Format(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
