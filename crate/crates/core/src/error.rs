use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed decomposition: {0}")]
    MalformedDecomposition(String),
    #[error("invalid coupling model: {0}")]
    InvalidModel(String),
    #[error("group matrix of group {group} is singular (condition number {cond:.3e})")]
    SingularGroupMatrix { group: usize, cond: f64 },
    #[error("no positive solution of the coefficient system for group {group}: s = {s:?}")]
    NoPositiveSolution { group: usize, s: Vec<f64> },
    #[error("no eigenvalue within tolerance of 3 (closest {closest})")]
    EigenvalueThreeMissing { closest: f64 },
    #[error("quadrature not converged: estimated error {estimate:.3e} > {tol:.3e}")]
    QuadratureNotConverged { estimate: f64, tol: f64 },
    #[error("point {0:?} lies outside the domain")]
    PointOutsideDomain([f64; 4]),
    #[error("point {point:?} is closer than {eta} to the boundary")]
    TooCloseToBoundary { point: [f64; 4], eta: f64 },
    #[error("image series not converged: last shell bound {bound:.3e}")]
    SeriesNotConverged { bound: f64 },
    #[error("linear solver not converged after {iterations} iterations (residual {residual:.3e})")]
    SolverNotConverged { iterations: usize, residual: f64 },
    #[error("no critical point found")]
    NoCriticalPointFound,
    #[error("basis does not match state: {0}")]
    BasisStateMismatch(String),
    #[error("fixed point iteration does not contract (step ratio {ratio:.3e} at iteration {iteration})")]
    NoContraction { ratio: f64, iteration: usize },
    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),
    #[error("ill-conditioned fit (condition number {cond:.3e})")]
    IllConditionedFit { cond: f64 },
    #[error("iterate left the admissible set X_eta: {0}")]
    ExitedXeta(String),
    #[error("resolution too coarse: spectral gap {gap:.3e} vs discretization error {err:.3e}")]
    ResolutionTooCoarse { gap: f64, err: f64 },
    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

impl Error {
    /// Variant name, for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedDecomposition(_) => "MalformedDecomposition",
            Error::InvalidModel(_) => "InvalidModel",
            Error::SingularGroupMatrix { .. } => "SingularGroupMatrix",
            Error::NoPositiveSolution { .. } => "NoPositiveSolution",
            Error::EigenvalueThreeMissing { .. } => "EigenvalueThreeMissing",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::PointOutsideDomain(_) => "PointOutsideDomain",
            Error::TooCloseToBoundary { .. } => "TooCloseToBoundary",
            Error::SeriesNotConverged { .. } => "SeriesNotConverged",
            Error::SolverNotConverged { .. } => "SolverNotConverged",
            Error::NoCriticalPointFound => "NoCriticalPointFound",
            Error::BasisStateMismatch(_) => "BasisStateMismatch",
            Error::NoContraction { .. } => "NoContraction",
            Error::LinearSolveFailed(_) => "LinearSolveFailed",
            Error::IllConditionedFit { .. } => "IllConditionedFit",
            Error::ExitedXeta(_) => "ExitedXeta",
            Error::ResolutionTooCoarse { .. } => "ResolutionTooCoarse",
            Error::DegenerateRegression(_) => "DegenerateRegression",
            Error::InvalidState(_) => "InvalidState",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
