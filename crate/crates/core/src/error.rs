use thiserror::Error;

/// Errors raised across the solver.
#[derive(Debug, Error)]
pub enum NdnnError {
    #[error("inadmissible state: component {component} = {value} ({reason})")]
    Inadmissible {
        component: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("strict hyperbolicity violated: eigenvalues {0} and {1} collide")]
    Hyperbolicity(f64, f64),
    #[error("position {x} outside the domain [{a}, {b}]")]
    OutOfDomain { x: f64, a: f64, b: f64 },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("training diverged at epoch {epoch} in term `{term}`{}", .subdomain.map(|s| format!(" (subdomain {s})")).unwrap_or_default())]
    Divergence {
        epoch: usize,
        term: String,
        subdomain: Option<usize>,
    },
    #[error("subdomain collapsed: width {width:e} at t = {t}")]
    Collapse { width: f64, t: f64 },
    #[error("discontinuity lines {left} and {right} out of order at t = {t}")]
    Ordering { left: usize, right: usize, t: f64 },
    #[error("reference point ({x}, {t}) outside the cone |x| <= t")]
    ReferenceDomain { x: f64, t: f64 },
    #[error("curves do not intersect: residual gap {gap:e}")]
    NoIntersection { gap: f64 },
    #[error("wave decomposition failed: {0}")]
    DecompositionFailure(String),
    #[error("Riemann problem generates vacuum")]
    Vacuum,
    #[error("time step violates CFL: {0}")]
    StepSize(String),
    #[error("shock tracking lost after t = {last_time}")]
    TrackingLost { last_time: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = NdnnError> = std::result::Result<T, E>;
