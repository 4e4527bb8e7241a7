use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// `P[state][action][·]` is not a probability distribution.
    RowNotStochastic { state: usize, action: usize, sum: f64 },
    /// Initial distribution is invalid; `index` names a negative or
    /// non-finite entry, `None` means the entries do not sum to one.
    BadInitial { index: Option<usize>, sum: f64 },
    BadShape(&'static str),
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    InvalidParameter(&'static str),
    InvalidDistribution(&'static str),
    SolverFailure { residual: f64 },
    NoConvergence { iterations: usize, residual: f64 },
    EmptyDataset,
    GaugeNotZero,
    MismatchedCoupling { learner: f64, expert: f64 },
    FdMismatch { max_rel_err: f64 },
    NonFiniteEvaluation { index: usize },
    Divergence { step: usize, value: f64 },
    DegenerateContrast,
    NonFiniteState { chain: usize, step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::RowNotStochastic { state, action, sum } => write!(
                f,
                "transition row (s={state}, a={action}) is not stochastic (sum {sum})"
            ),
            Error::BadInitial { index: Some(i), .. } => {
                write!(f, "initial distribution entry {i} is negative or not finite")
            }
            Error::BadInitial { index: None, sum } => {
                write!(f, "initial distribution sums to {sum}, expected 1")
            }
            Error::BadShape(what) => write!(f, "bad shape: {what}"),
            Error::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::InvalidDistribution(what) => write!(f, "invalid distribution: {what}"),
            Error::SolverFailure { residual } => {
                write!(f, "linear solve failed (residual {residual:e})")
            }
            Error::NoConvergence { iterations, residual } => write!(
                f,
                "power iteration did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::GaugeNotZero => write!(
                f,
                "policy has a nonzero gauge; use the gauged pseudo-state distribution"
            ),
            Error::MismatchedCoupling { learner, expert } => write!(
                f,
                "learner coupling k={learner} differs from expert coupling k={expert}"
            ),
            Error::FdMismatch { max_rel_err } => write!(
                f,
                "analytic gradient disagrees with finite differences (max rel err {max_rel_err:e})"
            ),
            Error::NonFiniteEvaluation { index } => {
                write!(f, "objective not finite near coordinate {index}")
            }
            Error::Divergence { step, value } => {
                write!(f, "descent diverged at step {step} (parameter {value})")
            }
            Error::DegenerateContrast => write!(
                f,
                "true visitation is already uniform; choose another MDP or policy"
            ),
            Error::NonFiniteState { chain, step } => write!(
                f,
                "Langevin chain {chain} produced a non-finite state at step {step}; reduce the step size"
            ),
        }
    }
}

impl core::error::Error for Error {}
