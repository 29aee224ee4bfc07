//! Parameter estimation by Differential Evolution on the training output
//! error.

mod de;

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use de::{minimize, BoundHandling, DEConfig, Minimum, TracePoint};

use crate::modelspace::CompiledModel;
use crate::simulate::{rrmse, DataError, Dataset, Denominator, Segment, SimError, Simulator, SolverConfig};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid optimizer settings {0:?}")]
    BadConfig(DEConfig),
    #[error("parameter {index} has infeasible bounds [{lo}, {hi}]")]
    InfeasibleBounds { index: usize, lo: f64, hi: f64 },
    #[error("no outputs to fit")]
    NoOutputs,
    #[error("the training segment is empty")]
    EmptyRange,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Summed training RRMSE of a model as a function of its parameters.
pub struct Objective<'a> {
    sim: Simulator<'a>,
    /// (measured series, state index) per output.
    outputs: Vec<(&'a [f64], usize)>,
    range: Range<usize>,
    solver: SolverConfig,
    denom: Denominator,
}

impl<'a> Objective<'a> {
    pub fn new(
        model: &'a CompiledModel,
        data: &'a Dataset,
        outputs: &[String],
        range: Range<usize>,
        solver: SolverConfig,
        denom: Denominator,
    ) -> Result<Objective<'a>, EstimateError> {
        solver.validate()?;
        if outputs.is_empty() {
            return Err(EstimateError::NoOutputs);
        }
        if range.is_empty() || range.end > data.len() {
            return Err(EstimateError::EmptyRange);
        }
        let outputs = outputs
            .iter()
            .map(|o| {
                let measured = data.require(o)?;
                let state = model
                    .states
                    .iter()
                    .position(|s| s.column == *o || s.name == *o)
                    .ok_or_else(|| SimError::UnknownOutput(o.clone()))?;
                Ok((measured, state))
            })
            .collect::<Result<_, EstimateError>>()?;
        Ok(Objective { sim: Simulator::new(model, data)?, outputs, range, solver, denom })
    }

    /// Training range of `data` with the default settings.
    pub fn training(
        model: &'a CompiledModel,
        data: &'a Dataset,
        outputs: &[String],
        solver: SolverConfig,
        denom: Denominator,
    ) -> Result<Objective<'a>, EstimateError> {
        Objective::new(model, data, outputs, data.range(Segment::Train), solver, denom)
    }

    /// Simulates up to the end of the range; `+∞` when the simulation fails
    /// or an error is undefined.
    pub fn eval(&self, params: &[f64]) -> f64 {
        let traj = self.sim.run_until(params, &self.solver, self.range.end);
        let mut total = 0.0;
        for &(measured, state) in &self.outputs {
            total += rrmse(measured, &traj.values[state], self.range.clone(), self.denom).value;
        }
        total
    }
}

/// One-shot objective evaluation on the training segment.
pub fn objective(
    model: &CompiledModel,
    params: &[f64],
    data: &Dataset,
    outputs: &[String],
    solver: &SolverConfig,
    denom: Denominator,
) -> Result<f64, EstimateError> {
    Ok(Objective::training(model, data, outputs, *solver, denom)?.eval(params))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    pub params: Vec<f64>,
    /// Best training error.
    pub error: f64,
    pub evals: usize,
    pub seed: u64,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

impl FitOutcome {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn to_json(&self) -> Value {
        json!({
            "params": self.names.iter().zip(&self.params).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "bounds": self.names.iter().zip(&self.bounds).map(|(n, b)| (n.clone(), json!([b.0, b.1]))).collect::<serde_json::Map<_, _>>(),
            "error": self.error,
            "seed": self.seed,
            "evals": self.evals,
        })
    }

    /// `generation,best_error,mean_error`
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["generation", "best_error", "mean_error"])?;
        for p in &self.trace {
            w.write_record([p.generation.to_string(), p.best_error.to_string(), p.mean_error.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits the free parameters of `model` against `outputs` on the training
/// segment.
pub fn estimate(
    model: &CompiledModel,
    data: &Dataset,
    outputs: &[String],
    de: &DEConfig,
    solver: &SolverConfig,
    denom: Denominator,
) -> Result<FitOutcome, EstimateError> {
    let obj = Objective::training(model, data, outputs, *solver, denom)?;
    let bounds = model.bounds();
    let m = minimize(&bounds, de, |p| obj.eval(p))?;
    Ok(FitOutcome {
        names: model.params.iter().map(|p| p.name.clone()).collect(),
        bounds,
        params: m.x,
        error: m.value,
        evals: m.evals,
        seed: de.seed,
        trace: m.trace,
    })
}

/// `reps` independent fits with seeds `seed, seed + 1, ...`, in seed order.
pub fn repeat_estimate(
    model: &CompiledModel,
    data: &Dataset,
    outputs: &[String],
    de: &DEConfig,
    solver: &SolverConfig,
    denom: Denominator,
    reps: usize,
) -> Result<Vec<FitOutcome>, EstimateError> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| estimate(model, data, outputs, &de.with_seed(de.seed.wrapping_add(r)), solver, denom))
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests;
