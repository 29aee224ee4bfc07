use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Dataset, SimError, Trajectory};

/// Which mean-deviation sum normalizes the squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Denominator {
    /// `Σ(ȳ − ŷ_t)²`, deviations of the simulated signal from the measured mean.
    #[default]
    AsPrinted,
    /// `Σ(ȳ − y_t)²`, the usual relative RMSE.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFlag {
    ZeroDenominator,
    SimulationFailed,
}

/// An error value; `+∞` comes with a flag explaining why.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub value: f64,
    pub flag: Option<ScoreFlag>,
}

impl Score {
    pub const ZERO: Score = Score { value: 0.0, flag: None };

    pub fn infinite(flag: ScoreFlag) -> Score {
        Score { value: f64::INFINITY, flag: Some(flag) }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

impl std::ops::Add for Score {
    type Output = Score;
    fn add(self, o: Score) -> Score {
        Score { value: self.value + o.value, flag: self.flag.or(o.flag) }
    }
}

/// Relative root mean squared error over `range`.
///
/// `simulated` may be shorter than `measured` when a simulation stopped
/// early; a range reaching past its end scores `+∞`.
pub fn rrmse(measured: &[f64], simulated: &[f64], range: Range<usize>, denom: Denominator) -> Score {
    assert!(!range.is_empty() && range.end <= measured.len(), "range {range:?} outside the measured series");
    if simulated.len() < range.end {
        return Score::infinite(ScoreFlag::SimulationFailed);
    }
    let y = &measured[range.clone()];
    let yhat = &simulated[range];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        num += (a - b) * (a - b);
        let d = match denom {
            Denominator::AsPrinted => mean - b,
            Denominator::Conventional => mean - a,
        };
        den += d * d;
    }
    if !num.is_finite() {
        return Score::infinite(ScoreFlag::SimulationFailed);
    }
    if den == 0.0 {
        return Score::infinite(ScoreFlag::ZeroDenominator);
    }
    Score { value: (num / den).sqrt(), flag: None }
}

/// Summed [`rrmse`] over the listed output columns.
pub fn multi_output_error(
    traj: &Trajectory,
    data: &Dataset,
    outputs: &[String],
    range: Range<usize>,
    denom: Denominator,
) -> Result<Score, SimError> {
    let mut total = Score::ZERO;
    for out in outputs {
        let measured = data.require(out)?;
        let simulated = traj.series(out).ok_or_else(|| SimError::UnknownOutput(out.clone()))?;
        total = total + rrmse(measured, simulated, range.clone(), denom);
    }
    Ok(total)
}
