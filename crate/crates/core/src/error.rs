use thiserror::Error;

/// Errors raised while building, parsing, or evaluating expression trees.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },
    #[error("arity error at {position}: {connector} takes {expected} children, found {found}")]
    Arity {
        position: String,
        connector: &'static str,
        expected: &'static str,
        found: usize,
    },
    #[error("identity may only appear as the sole operator of a sequence (at {position})")]
    IdentityInSequence { position: String },
    #[error("invalid structure at {position}: {message}")]
    Structure { position: String, message: String },
    #[error("variable index {index} does not resolve (dataset has {columns} columns)")]
    UnresolvedVariable { index: usize, columns: usize },
    #[error("unknown leaf {0:?}")]
    UnknownLeaf(Vec<usize>),
    #[error("tree exceeds bounds: depth {depth} (max {max_depth}), width {width} (max {max_width})")]
    Bounds {
        depth: usize,
        width: usize,
        max_depth: usize,
        max_width: usize,
    },
    #[error("parameter vector has length {found}, tree expects {expected}")]
    ParameterCount { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset needs at least one feature column and a target column")]
    TooFewColumns,
    #[error("row {row}, column {column}: {message}")]
    Value {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("corpus record {record}: {source}")]
    Record {
        record: usize,
        #[source]
        source: ExprError,
    },
    #[error("corpus record {0} references no variables")]
    NoVariables(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("epsilon {epsilon} too large to floor {unseen} unseen symbols")]
    Epsilon { epsilon: f64, unseen: usize },
    #[error("malformed prior file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("skeleton does not match the controller registry: {0}")]
    Mismatch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset needs at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("search produced no finite candidate after {iterations} iterations ({sampled} skeletons sampled, {invalid} invalid)")]
    EmptyPool {
        iterations: usize,
        sampled: usize,
        invalid: usize,
    },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("problem {name}: {message}")]
    Problem { name: String, message: String },
    #[error("problem {name}: ground truth is non-finite on {failures} consecutive draws")]
    NonFinite { name: String, failures: usize },
    #[error("suite is empty")]
    EmptySuite,
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("variant {0} needs a prior model")]
    MissingPrior(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
