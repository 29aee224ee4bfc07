use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchError, GroundTruth};
use crate::assets;
use crate::dsl::{parse_library, parse_scenario};
use crate::estimate::mean_std;
use crate::search::{run_multi_stage, run_single_stage, RankedResult, SearchConfig, StagePlan};
use crate::simulate::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Multi,
}

/// Ranking obtained on one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureRecovery {
    pub variance: f64,
    /// Final ranking (stage 2 in multi-stage mode, with composite ids).
    pub results: Vec<RankedResult>,
    /// Stage-1 ranking in multi-stage mode.
    pub stage1: Option<Vec<RankedResult>>,
    /// Rank of the ground-truth structure, if present.
    pub truth_rank: Option<usize>,
    /// Validation error of rank 2 minus rank 1.
    pub gap: f64,
}

/// Runs the chosen identification mode on each dataset.
pub fn structure_recovery_experiment(
    mode: Mode,
    datasets: &[(f64, Dataset)],
    cfg: &SearchConfig,
) -> Result<Vec<StructureRecovery>, BenchError> {
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let sc = parse_scenario(assets::SINGLE_STAGE_PBS, &lib)?;
    let plan = StagePlan::bundled_two_stage();
    datasets
        .par_iter()
        .map(|(variance, data)| {
            let (results, stage1) = match mode {
                Mode::Single => (run_single_stage(&lib, &sc, data, &outputs(), cfg)?, None),
                Mode::Multi => {
                    let out = run_multi_stage(&lib, &plan, data, cfg)?;
                    (out.results, Some(out.stages[0].results.clone()))
                }
            };
            let truth_rank = results.iter().find(|r| r.id == GroundTruth::ID).map(|r| r.rank);
            let gap = match results.as_slice() {
                [a, b, ..] => b.validation_error - a.validation_error,
                _ => f64::INFINITY,
            };
            Ok(StructureRecovery { variance: *variance, results, stage1, truth_rank, gap })
        })
        .collect()
}

pub const RATIO_NAMES: [&str; 4] = ["a1/A1", "k/A1", "a2/A2", "a1/A2"];

/// One repetition of the parameter-recovery study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioErrors {
    pub seed: u64,
    pub ratios: [f64; 4],
    /// `|fitted / true - 1|` per ratio.
    pub rel_errors: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRecovery {
    pub variance: f64,
    pub reps: Vec<RatioErrors>,
}

impl ParamRecovery {
    /// Median relative error of ratio `i`.
    pub fn median(&self, i: usize) -> f64 {
        median(self.reps.iter().map(|r| r.rel_errors[i]).collect())
    }

    pub fn max(&self, i: usize) -> f64 {
        self.reps.iter().map(|r| r.rel_errors[i]).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn outputs() -> Vec<String> {
    vec!["h1".into(), "h2".into()]
}

/// Fixes every open process of the single-stage scenario to one leaf.
fn fixed_scenario(leaf: &str) -> String {
    assets::SINGLE_STAGE_PBS
        .replace(": ValveTransmission {", &format!(": ValveTransmission.{leaf} {{"))
        .replace(": Outflow {", &format!(": Outflow.{leaf} {{"))
}

/// Two-stage plan with SquareRoot fixed in both stages.
fn fixed_plan() -> StagePlan {
    let mut plan = StagePlan::bundled_two_stage();
    plan.stages[0].scenario_text =
        plan.stages[0].scenario_text.replace(": ValveTransmission {", ": ValveTransmission.SquareRoot {");
    plan.stages[1].scenario_text = plan.stages[1].scenario_text.replace(": Outflow {", ": Outflow.SquareRoot {");
    plan
}

/// Fits the S-S structure `reps` times per dataset with DE seeds
/// `seed, seed + 1, ...` and reports the errors of the identifiable ratios.
pub fn parameter_recovery_experiment(
    mode: Mode,
    datasets: &[(f64, Dataset)],
    reps: usize,
    gt: &GroundTruth,
    cfg: &SearchConfig,
) -> Result<Vec<ParamRecovery>, BenchError> {
    let lib = parse_library(assets::WATERTANKS_PBL)?;
    let sc = parse_scenario(&fixed_scenario("SquareRoot"), &lib)?;
    let plan = fixed_plan();
    plan.validate(&lib)?;
    let truth = gt.ratios();
    let jobs: Vec<(usize, u64)> =
        (0..datasets.len()).flat_map(|d| (0..reps as u64).map(move |r| (d, r))).collect();
    let fits = jobs
        .par_iter()
        .map(|&(d, r)| {
            let data = &datasets[d].1;
            let seed = cfg.de.seed.wrapping_add(r);
            let c = SearchConfig { de: cfg.de.with_seed(seed), ..cfg.clone() };
            let p = |res: &RankedResult, n: &str| res.param(n).expect("S-S parameter");
            let ratios = match mode {
                Mode::Single => {
                    let res = &run_single_stage(&lib, &sc, data, &outputs(), &c)?[0];
                    let a1 = p(res, "tank1.a");
                    let big_a1 = p(res, "tank1.A");
                    let big_a2 = p(res, "tank2.A");
                    [a1 / big_a1, p(res, "pump.k") / big_a1, p(res, "tank2.a") / big_a2, a1 / big_a2]
                }
                Mode::Multi => {
                    let out = run_multi_stage(&lib, &plan, data, &c)?;
                    let s1 = &out.stages[0].results[0];
                    let s2 = &out.results[0];
                    let a1 = p(s1, "tank1.a");
                    let big_a1 = p(s1, "tank1.A");
                    let big_a2 = p(s2, "tank2.A");
                    [a1 / big_a1, p(s1, "pump.k") / big_a1, p(s2, "tank2.a") / big_a2, a1 / big_a2]
                }
            };
            let rel_errors = std::array::from_fn(|i| (ratios[i] / truth[i] - 1.0).abs());
            Ok(RatioErrors { seed, ratios, rel_errors })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let mut out: Vec<ParamRecovery> =
        datasets.iter().map(|(v, _)| ParamRecovery { variance: *v, reps: Vec::with_capacity(reps) }).collect();
    for ((d, _), fit) in jobs.into_iter().zip(fits) {
        out[d].reps.push(fit);
    }
    Ok(out)
}

/// Fitted exponents of the P-P structure over the repetitions on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRecovery {
    pub variance: f64,
    pub p_valve: Vec<f64>,
    pub p_outflow: Vec<f64>,
}

impl PowerRecovery {
    pub fn valve_mean_std(&self) -> (f64, f64) {
        mean_std(&self.p_valve)
    }

    pub fn outflow_mean_std(&self) -> (f64, f64) {
        mean_std(&self.p_outflow)
    }
}

/// Fits P-P from the extended library `reps` times per dataset.
pub fn power_exponent_experiment(
    datasets: &[(f64, Dataset)],
    reps: usize,
    cfg: &SearchConfig,
) -> Result<Vec<PowerRecovery>, BenchError> {
    let lib = parse_library(assets::WATERTANKS_POWER_PBL)?;
    let sc = parse_scenario(&fixed_scenario("Power"), &lib)?;
    let jobs: Vec<(usize, u64)> =
        (0..datasets.len()).flat_map(|d| (0..reps as u64).map(move |r| (d, r))).collect();
    let fits = jobs
        .par_iter()
        .map(|&(d, r)| {
            let c = SearchConfig { de: cfg.de.with_seed(cfg.de.seed.wrapping_add(r)), ..cfg.clone() };
            let res = &run_single_stage(&lib, &sc, &datasets[d].1, &outputs(), &c)?[0];
            let pv = res.param("valveTransmission.P").ok_or_else(|| BenchError::NoStructure("P-P".into()))?;
            let po = res.param("outflow.P").ok_or_else(|| BenchError::NoStructure("P-P".into()))?;
            Ok((pv, po))
        })
        .collect::<Result<Vec<_>, BenchError>>()?;
    let mut out: Vec<PowerRecovery> = datasets
        .iter()
        .map(|(v, _)| PowerRecovery { variance: *v, p_valve: Vec::new(), p_outflow: Vec::new() })
        .collect();
    for ((d, _), (pv, po)) in jobs.into_iter().zip(fits) {
        out[d].p_valve.push(pv);
        out[d].p_outflow.push(po);
    }
    Ok(out)
}
