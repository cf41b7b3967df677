use thiserror::Error;

use crate::params::Regime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ILL_POSED: kappa = {kappa:.6e} <= 0, the optimal value is infinite")]
    IllPosed { kappa: f64 },

    #[error("regime mismatch: {operation} requires {expected}, got {actual:?}")]
    RegimeMismatch {
        operation: &'static str,
        expected: &'static str,
        actual: Regime,
    },

    #[error("UNSUPPORTED: kappa = {kappa:.6e} < k + r = {threshold:.6e} (or k = 0 with l > 0); no solver is available for this case")]
    Unsupported { kappa: f64, threshold: f64 },

    #[error("{what} = {value} outside the admissible domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("candidate boundary {x_hat} outside the bracket [{lo}, {hi}]")]
    OutsideBracket { x_hat: f64, lo: f64, hi: f64 },

    #[error("root bracket failure in {0}")]
    Bracket(&'static str),

    #[error("bracket endpoints give the same residual sign: r(lo) = {r_lo:e}, r(hi) = {r_hi:e}")]
    NoSignChange { r_lo: f64, r_hi: f64 },

    #[error("integration left the constrained branch at y = {y:e} (x = {x})")]
    BranchViolation { y: f64, x: f64 },

    #[error("dual value lost convexity at y = {y:e} (x = {x})")]
    ConvexityLoss { y: f64, x: f64 },

    #[error("step size underflow at y = {y:e}")]
    StepUnderflow { y: f64 },

    #[error("x = {x} lies beyond the solved range (max {x_max}); asymptotic fallback a_inf*x^p = {fallback}")]
    Extrapolation { x: f64, x_max: f64, fallback: f64 },

    #[error("finite-difference iteration did not converge after {iterations} iterations (last update {last_update:e})")]
    NonConvergence { iterations: usize, last_update: f64 },

    #[error("discrete concavity lost at node {node} (x = {x})")]
    ConcavityLoss { node: usize, x: f64 },

    #[error("no sign change of the consumption gap on the grid")]
    NoCrossing,

    #[error("policy violates 0 <= c <= kx + l at t = {t}, x = {x}, c = {c}")]
    PolicyViolation { t: f64, x: f64, c: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
