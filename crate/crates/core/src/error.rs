use thiserror::Error;

pub type Result<T> = std::result::Result<T, MimicError>;

#[derive(Debug, Error)]
pub enum MimicError {
    #[error("label set is empty or contains duplicates")]
    BadLabels,

    #[error("{what} has {got} entries, expected {want}")]
    BadShape {
        what: &'static str,
        got: usize,
        want: usize,
    },

    #[error("{what} is not a probability vector: {detail}")]
    BadDistribution { what: &'static str, detail: String },

    #[error("path table would hold {size} entries, over the {cap} cap")]
    PathSpaceTooLarge { size: u128, cap: u64 },

    #[error("time index {t} outside 0..={max}")]
    TimeOutOfRange { t: usize, max: usize },

    #[error("operation needs an interior time 0 < s < {horizon}, got {s}")]
    NotInterior { s: usize, horizon: usize },

    #[error("laws live on different spaces or horizons")]
    SpaceMismatch,

    #[error("operation requires an uncontrolled law")]
    ControlledLaw,

    #[error("absolute continuity fails: path ({path}) carries mass {mass} but the reference gives it zero")]
    NotDominated { path: String, mass: String },

    #[error("reference law is not Markov at time {s}: conditional gap {gap}")]
    NonMarkovReference { s: usize, gap: String },

    #[error("constraint at t={t} charges state {state} outside the reference marginal support")]
    InfeasibleSupport { t: usize, state: usize },

    #[error("constraints admit no law: no joint support reaches state {state} at t={t}")]
    InfeasibleJoint { t: usize, state: usize },

    #[error("no convergence after {iters} cycles; residual {residual}")]
    NoConvergence { iters: usize, residual: String },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("matrix is not symmetric nonnegative-definite")]
    NotPsd,

    #[error("discount factor must lie in (0, 1), got {beta}")]
    BadDiscount { beta: String },

    #[error("operation requires a stationary policy")]
    NonStationaryPolicy,

    #[error("drift magnitude {got} exceeds the declared bound {bound}")]
    DriftBound { got: String, bound: String },

    #[error("intensity {got} exceeds the declared maximum {max}")]
    IntensityBound { got: String, max: String },

    #[error("policy time grid does not match the model grid")]
    GridMismatch,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MimicError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        MimicError::Parse {
            line,
            message: message.into(),
        }
    }
}
