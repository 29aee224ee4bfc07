//! Long-term simulation from initial conditions and the output-error metric.

mod dataset;
mod metric;
mod solver;

use thiserror::Error;

pub use dataset::{DataError, Dataset, Segment, Split};
pub use metric::{multi_output_error, rrmse, Denominator, Score, ScoreFlag};
pub use solver::{Failure, FailureReason, InputHold, Simulator, SolverConfig, SolverStats, Trajectory};

use crate::modelspace::CompiledModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dataset has no column `{0}` for a model input")]
    MissingColumn(String),
    #[error("output `{0}` is not observed by any state of the model")]
    UnknownOutput(String),
    #[error("invalid solver settings {0:?}")]
    BadSolverConfig(SolverConfig),
}

/// Simulates `model` over the whole grid of `data`. Integration failures are
/// reported in the trajectory, not as errors.
pub fn simulate(
    model: &CompiledModel,
    params: &[f64],
    data: &Dataset,
    cfg: &SolverConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    Ok(Simulator::new(model, data)?.run(params, cfg))
}

#[cfg(test)]
mod tests;
