use crate::model::ValidationReport;

/// Errors shared by the analytic, transform, fluid, and simulation modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A distribution was constructed with inadmissible parameters.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Structural defect in a model definition (mismatched lengths, bad table).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A solver or simulator was handed a (model, policy) pair that fails
    /// validation; the report lists every violated invariant.
    #[error("model/policy pair rejected by validation: {0}")]
    Inadmissible(ValidationReport),

    /// Moment order outside the supported range {1, 2}.
    #[error("unsupported moment order {0}: only orders 1 and 2 are available")]
    UnsupportedOrder(u32),

    /// LSTs are evaluated on nonnegative arguments only.
    #[error("LST argument {0} is negative")]
    NegativeLstArgument(f64),

    /// A fixed-point iteration failed to reach its tolerance.
    #[error("{what} did not converge within {max_iters} iterations")]
    NonConvergence { what: &'static str, max_iters: u64 },

    /// A fixed-point iteration produced unbounded iterates.
    #[error("{what} diverged (iterates exceeded {bound:e})")]
    Divergence { what: &'static str, bound: f64 },

    /// The contraction diagnostic was given an `alpha` violating the
    /// row-sum admissibility condition.
    #[error("alpha = {alpha} violates the contraction condition for queue {queue}")]
    InvalidAlpha { alpha: f64, queue: usize },

    /// Generic invalid argument (index out of range, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Too few observations to form the requested batch-means estimate.
    #[error("insufficient samples for batching: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
