use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid anisotropy profile: {0}")]
    InvalidProfile(String),

    /// A required hypothesis (for instance a_i >= 2) does not hold.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("normal ray leaves the nearest-point region at depth {depth}: {reason}")]
    RayExit { depth: f64, reason: String },

    #[error("barrier undefined at {point:?}: {reason}")]
    BarrierDomain { point: Vec<f64>, reason: String },

    #[error("hessian not convex here: {0}")]
    NotConvex(String),

    /// A standing assumption of the problem (e.g. x.Du - u > 0) failed.
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("epsilon selection failed: {0}")]
    Selection(String),

    #[error("node {0} lies on the boundary of the triangulated domain")]
    BoundaryNode(usize),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("fixed point collapsed to the trivial solution (sup norm {sup_norm:.3e}); use a larger initial scale")]
    DegenerateFixedPoint { sup_norm: f64 },

    #[error("radial oracle failed: {0}")]
    Oracle(String),

    #[error("fit window too deep: |u| = {value:.3e} at depth {depth:.3e}")]
    WindowTooDeep { depth: f64, value: f64 },

    #[error("configuration error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
