use thiserror::Error;

/// Errors raised across the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("relation is incomplete: pair ({x}, {y}) has no allowed answer")]
    IncompleteRelation { x: usize, y: usize },

    #[error("index out of range: {what} = {index} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("unknown relation family: {0}")]
    UnknownFamily(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("size cap exceeded: {size} > {cap}")]
    SizeCapExceeded { size: u128, cap: u128 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid probability entry at {index}: {value}")]
    InvalidEntry { index: usize, value: f64 },

    #[error("not normalized (expected sum within {tol} of 1): sum = {sum}")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("conditional on a zero-mass event: {0}")]
    ConditionalOnNullEvent(String),

    #[error("support violation: weight on x = {x} outside the support of the base marginal")]
    SupportViolation { x: usize },

    #[error("delta must lie in (0, 1), got {0}")]
    DeltaOutOfRange(f64),

    #[error("epsilon must lie in [0, 1), got {0}")]
    EpsOutOfRange(f64),

    #[error("no one-way distribution reaches error <= {eps}")]
    Infeasible { eps: f64 },

    #[error("search cap exceeded: |X| = {n} > {cap}")]
    SearchCapExceeded { n: usize, cap: usize },

    #[error("no witness within budget {budget} bits (best found {best} bits) at component {component}")]
    WitnessBudgetExceeded {
        budget: f64,
        best: f64,
        component: usize,
    },

    #[error("degenerate residual: {0}")]
    DegenerateResidual(String),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
