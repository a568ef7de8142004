use thiserror::Error;

/// Errors raised by the transport solvers, loss functions and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample set")]
    EmptySamples,

    #[error("non-finite value")]
    NonFinite,

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("sinkhorn diverged: marginal residual {residual:.3e} after {iterations} iterations")]
    SinkhornDiverged { residual: f64, iterations: usize },

    #[error("regularization must be positive and finite, got {0}")]
    InvalidRegularization(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spd sqrt failure")]
    SpdSqrtFailure,

    #[error("covariance of component {0} is not positive semidefinite")]
    NotPositiveSemidefinite(usize),

    #[error("no aligned sub-domains")]
    NoAlignedSubdomains,

    #[error("invalid class weights: {0}")]
    InvalidWeights(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("degenerate source weight {weight:.3e} for class {class}")]
    DegenerateSourceWeight { class: usize, weight: f64 },

    #[error("gradient blowup in layer {layer}")]
    GradientBlowup { layer: usize },

    #[error("stale activation cache")]
    StaleCache,

    #[error("class cardinality mismatch: source has {source_classes}, target has {target_classes}")]
    ClassCardinalityMismatch {
        source_classes: usize,
        target_classes: usize,
    },

    #[error("class {0} is absent from the data")]
    ClassAbsent(usize),

    #[error("training failed at epoch {epoch}, batch {batch}: {cause}")]
    Training {
        epoch: usize,
        batch: usize,
        cause: Box<Error>,
    },

    #[error("paired-distance audit failed after {0} attempts")]
    AuditFailed(usize),

    #[error("exact transport solver did not terminate within {0} pivots")]
    PivotLimit(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
