use thiserror::Error;

/// Errors produced by parameter validation, the kernel solver and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("anti-damping coefficient theta = {theta} coincides with sqrt(epsilon) = {sqrt_eps}; the uncontrolled boundary condition is ill-posed")]
    IllPosedAntiDamping { theta: f64, sqrt_eps: f64 },

    #[error("coefficient `{name}` must be positive, got {value}")]
    NonPositiveCoefficient { name: &'static str, value: f64 },

    #[error("only mu > epsilon (1/sqrt(eps) > 1/sqrt(mu)) is supported, got epsilon = {epsilon}, mu = {mu}")]
    UnsupportedSpeedOrdering { epsilon: f64, mu: f64 },

    #[error("parameter `{name}` is not finite")]
    NonFinite { name: &'static str },

    #[error("grid too coarse: n = {n}, at least {min} cells required")]
    GridTooCoarse { n: usize, min: usize },

    #[error("array length {got} does not match grid with {expected} nodes")]
    GridMismatch { expected: usize, got: usize },

    #[error("kernel iteration did not converge after {iterations} sweeps (last change {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("time step violates CFL: courant number {courant} > 1")]
    CflViolation { courant: f64 },

    #[error("state became non-finite or exceeded {limit:e} at t = {time}")]
    NonFiniteState { time: f64, limit: f64 },

    #[error("energy is not positive at t = {time}; cannot fit a log-linear decay")]
    NonPositiveEnergy { time: f64 },

    #[error("not enough samples for a decay fit: {got} < {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
