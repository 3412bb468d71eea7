use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative timestamp {t} at record {index}")]
    NegativeTimestamp { index: usize, t: f64 },

    #[error("timestamp at record {index} is not finite")]
    NonFiniteTimestamp { index: usize },

    #[error("inconsistent edge feature width at record {index}: expected {expected}, found {found}")]
    FeatureWidth {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("node feature matrix has {rows} rows but the stream has {num_nodes} nodes")]
    NodeFeatureRows { rows: usize, num_nodes: usize },

    #[error("batch size must be at least 1")]
    ZeroBatchSize,

    #[error("modulus must be at least 1")]
    ZeroModulus,

    #[error("graph is disconnected (spectral gap is zero)")]
    Disconnected,

    #[error("graph has {vertices} vertices, above the dense eigensolver cap of {cap}")]
    EigenCapExceeded { vertices: usize, cap: usize },

    #[error("spectral gap needs at least two vertices")]
    TooFewVertices,

    #[error("expander graph has {capacity} vertices but {needed} are required")]
    ExpanderTooSmall { capacity: usize, needed: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("node {node} has an empty neighbourhood and self-loops are disabled")]
    EmptyNeighbourhood { node: usize },

    #[error("invalid batch map: {0}")]
    BatchMap(String),

    #[error("node {node} is out of range (num_nodes = {num_nodes})")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("node {0} has neither an expander row nor a memory row")]
    MissingFeatureRow(usize),

    #[error("out-of-order batch: starts at {start} but the previous batch ended at {last}")]
    OutOfOrderBatch { start: f64, last: f64 },

    #[error("surprise index is undefined for an empty test set")]
    EmptyTestSet,

    #[error("need {requested} negatives but only {available} candidates exist")]
    NotEnoughCandidates { requested: usize, available: usize },

    #[error("invalid split fractions: {0}")]
    BadSplit(String),

    #[error("infeasible generator settings: {0}")]
    Infeasible(String),

    #[error("mean reciprocal rank of an empty rank list")]
    EmptyRanks,

    #[error("config conflict: {0}")]
    Config(String),

    #[error("reports are not comparable: {0}")]
    Mismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
