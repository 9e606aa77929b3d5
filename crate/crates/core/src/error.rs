use thiserror::Error;

use crate::exprlang::EvalError;

/// Failures shared by the geometric, dynamical and action computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("base points differ: {0}")]
    BaseMismatch(String),
    #[error("no transition connects chart {from} to chart {to} at {base:?}")]
    ChartDisjoint { from: usize, to: usize, base: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("chart schedule error: {0}")]
    ChartSchedule(String),
    #[error("trajectory left chart {chart} at t = {t} and no neighbouring chart contains it")]
    ChartExit { chart: usize, t: f64 },
    #[error("velocity Hessian is numerically singular (condition estimate {condition:e})")]
    SingularLagrangian { condition: f64 },
    #[error("{invariant} violated at {location}: defect {defect:e}")]
    Validation { invariant: String, location: String, defect: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
