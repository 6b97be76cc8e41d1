use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: {message}")]
pub struct ShapeError {
    pub message: String,
}

impl ShapeError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dimension mismatch in {}: {message}", path.display())]
    DimensionMismatch { path: PathBuf, message: String },
    #[error("{}:{line}: node {node} out of range for {num_nodes} nodes", path.display())]
    NodeOutOfRange {
        path: PathBuf,
        line: usize,
        node: usize,
        num_nodes: usize,
    },
    #[error("{}:{line}: non-finite feature value", path.display())]
    NonFinite { path: PathBuf, line: usize },
    #[error("duplicate edge ({source_node}, {target})")]
    DuplicateEdge { source_node: usize, target: usize },
    #[error("self-loop flag is {flag} but the edge list disagrees: {message}")]
    SelfLoopMismatch { flag: bool, message: String },
    #[error("node {node} is not in the graph ({num_nodes} nodes)")]
    InvalidNode { node: usize, num_nodes: usize },
    #[error("node {node} is not a neighbor in the subgraph of {center}")]
    NotANeighbor { node: usize, center: usize },
    #[error("checksum mismatch for {file}: expected {expected}, found {found}")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("graph has no training nodes")]
    NoTrainingNodes,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite loss {loss} while training {what}")]
    NonFiniteLoss { what: &'static str, loss: f64 },
    #[error("invalid explainer configuration: {0}")]
    Config(String),
    #[error("embedding width {found} does not match explainer input width {expected}")]
    EmbeddingMismatch { expected: usize, found: usize },
    #[error("unknown explanation method {0:?}")]
    UnknownMethod(String),
    #[error("explainer artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("explanation for node {target} does not match the graph: {message}")]
    ExplanationMismatch { target: usize, message: String },
    #[error("a curve needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("deletion percents {0:?} must strictly increase within [0, 100]")]
    InvalidPercents(Vec<u32>),
}

/// Top-level error used by the CLI and the C API.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by numerics (divergence, non-finite losses).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Model(ModelError::Divergence { .. })
                | Error::Explain(ExplainError::NonFiniteLoss { .. })
                | Error::Explain(ExplainError::Model(ModelError::Divergence { .. }))
        )
    }

    /// Process exit code: 3 for numerical failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            3
        } else {
            2
        }
    }
}
