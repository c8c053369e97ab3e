use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("singular linear system while {0}")]
    Singular(&'static str),

    #[error("stationary distribution is not unique; closed classes: {classes:?}")]
    NonUniqueStationary { classes: Vec<Vec<usize>> },

    #[error("behaviour probability of taken action {action} at step {step} is zero")]
    ZeroBehaviourProbability { step: usize, action: usize },

    #[error("target probability of action {action} is zero, ratio undefined")]
    ZeroTargetProbability { action: usize },

    #[error("trajectory head state {state} is rejected by the trust region")]
    Rejected { state: usize },

    #[error("threshold is unbounded: state is unreachable under the target policy")]
    UnboundedThreshold,

    #[error("mixed mode needs at least one online trajectory")]
    NoOnlineData,

    #[error("enumeration needs {leaves} leaves, budget is {budget}; use a smaller MDP or depth")]
    EnumerationBudget { leaves: u64, budget: u64 },

    #[error("tail bound {bound:e} at depth {depth} exceeds tolerance {tolerance:e}")]
    TailTolerance {
        bound: f64,
        depth: usize,
        tolerance: f64,
    },

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}
