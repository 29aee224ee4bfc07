//! The identification pipeline: enumerate candidate structures, fit each on
//! the training segment, score on validation and test, rank.

mod plan;
mod report;

use std::collections::HashMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use plan::{PromoteRule, StagePlan, StageSpec};
pub use report::{report, write_series, ReportFormat};

use crate::dsl::{parse_scenario_with, DslError, Library, Scenario, Substitution};
use crate::estimate::{estimate, DEConfig, EstimateError, TracePoint};
use crate::modelspace::{compile, enumerate, instantiate, CandidateStructure, CompiledModel, ModelError};
use crate::simulate::{
    rrmse, DataError, Dataset, Denominator, InputHold, Segment, SimError, Simulator, SolverConfig,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid stage plan: {0}")]
    Plan(String),
    #[error("cannot read `{0}`: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("scenario of stage `{0}`: {1}")]
    Scenario(String, #[source] DslError),
    #[error("stage `{stage}` promotion mismatch (missing: {missing:?}, unused: {unused:?})")]
    Promotion { stage: String, missing: Vec<String>, unused: Vec<String> },
    #[error("dataset has no column `{0}` to fit against")]
    MissingOutput(String),
    #[error("winner `{id}` of stage `{stage}` fails to simulate signal `{signal}`")]
    SignalFailed { stage: String, id: String, signal: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub de: DEConfig,
    pub solver: SolverConfig,
    pub denominator: Denominator,
    /// Output scored on the test segment, when a stage observes it.
    pub test_output: String,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            de: DEConfig::default(),
            solver: SolverConfig::default(),
            denominator: Denominator::AsPrinted,
            test_output: "h2".into(),
        }
    }
}

/// One fitted and scored candidate structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    /// 1-based position in the ranking.
    pub rank: usize,
    pub id: String,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub train_error: f64,
    /// Summed over the fitted outputs.
    pub validation_error: f64,
    pub test_error: f64,
    pub test_output: String,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub evals: usize,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
    #[serde(skip)]
    pub structure: CandidateStructure,
    #[serde(skip)]
    pub model: CompiledModel,
}

impl RankedResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }
}

/// Per-structure DE seed, independent of enumeration order and scheduling.
pub fn structure_seed(base: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Fits every structure of `scenario` against `outputs` and ranks them by
/// summed validation RRMSE.
pub fn run_single_stage(
    lib: &Library,
    scenario: &Scenario,
    data: &Dataset,
    outputs: &[String],
    cfg: &SearchConfig,
) -> Result<Vec<RankedResult>, SearchError> {
    run_stage(lib, scenario, data, outputs, None, &[], cfg)
}

fn run_stage(
    lib: &Library,
    scenario: &Scenario,
    data: &Dataset,
    outputs: &[String],
    test_output: Option<&str>,
    holds: &[(String, InputHold)],
    cfg: &SearchConfig,
) -> Result<Vec<RankedResult>, SearchError> {
    cfg.de.validate()?;
    cfg.solver.validate()?;
    if outputs.is_empty() {
        return Err(EstimateError::NoOutputs.into());
    }
    for o in outputs {
        if data.column(o).is_none() {
            return Err(SearchError::MissingOutput(o.clone()));
        }
    }
    let structures = enumerate(&instantiate(lib, scenario)?);
    let mut models = structures.iter().map(|s| compile(s, scenario)).collect::<Result<Vec<_>, _>>()?;
    for input in models.iter_mut().flat_map(|m| m.inputs.iter_mut()) {
        if let Some((_, h)) = holds.iter().find(|(c, _)| *c == input.column) {
            input.hold = Some(*h);
        }
    }
    let test_output = test_output.map(str::to_string).unwrap_or_else(|| {
        let observed = models.iter().all(|m| m.states.iter().any(|s| s.column == cfg.test_output));
        if observed {
            cfg.test_output.clone()
        } else {
            outputs[outputs.len() - 1].clone()
        }
    });
    // Configuration errors surface here, before any fitting.
    for m in &models {
        Simulator::new(m, data)?;
        for o in outputs.iter().chain([&test_output]) {
            if !m.states.iter().any(|s| s.column == *o || s.name == *o) {
                return Err(SimError::UnknownOutput(o.clone()).into());
            }
        }
    }
    data.require(&test_output)?;

    let mut results = structures
        .into_par_iter()
        .zip(models)
        .map(|(structure, model)| {
            let de = cfg.de.with_seed(structure_seed(cfg.de.seed, &structure.id));
            let fit = estimate(&model, data, outputs, &de, &cfg.solver, cfg.denominator)?;
            let traj = Simulator::new(&model, data)?.run(&fit.params, &cfg.solver);
            let score = |o: &str, seg| {
                let sim = traj.series(o).unwrap_or(&[]);
                let measured = data.column(o).unwrap_or(&[]);
                let v = rrmse(measured, sim, data.range(seg), cfg.denominator).value;
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            };
            let validation_error = outputs.iter().map(|o| score(o, Segment::Validation)).sum();
            let test_error = score(&test_output, Segment::Test);
            Ok(RankedResult {
                rank: 0,
                id: structure.id.clone(),
                names: fit.names,
                params: fit.params,
                train_error: fit.error,
                validation_error,
                test_error,
                test_output: test_output.clone(),
                outputs: outputs.to_vec(),
                seed: fit.seed,
                evals: fit.evals,
                trace: fit.trace,
                structure,
                model,
            })
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    rank(&mut results);
    Ok(results)
}

/// Sorts by validation error (`+∞` last), ties by id, and numbers the ranks.
pub fn rank(results: &mut [RankedResult]) {
    results.sort_by(|a, b| a.validation_error.total_cmp(&b.validation_error).then_with(|| a.id.cmp(&b.id)));
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

/// Whether the first two ranks share a validation error.
pub fn top_tie(results: &[RankedResult]) -> bool {
    results.len() > 1 && results[0].validation_error == results[1].validation_error
}

/// Values a stage hands to the next one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Promoted {
    Template(String),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub name: String,
    pub results: Vec<RankedResult>,
    /// Rank 1 and rank 2 tied on validation; rank 1 was promoted by id order.
    pub tie: bool,
    pub promoted: IndexMap<String, Promoted>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiStageOutcome {
    pub stages: Vec<StageOutcome>,
    /// Last stage's ranking with ids prefixed by the earlier winners.
    pub results: Vec<RankedResult>,
    /// Dataset the last stage was fitted on.
    #[serde(skip)]
    pub data: Dataset,
}

/// Runs the stages in order, substituting each winner's promoted values into
/// the next stage's scenario.
pub fn run_multi_stage(
    lib: &Library,
    plan: &StagePlan,
    data: &Dataset,
    cfg: &SearchConfig,
) -> Result<MultiStageOutcome, SearchError> {
    plan.validate(lib)?;
    for stage in &plan.stages {
        for o in &stage.outputs {
            if data.column(o).is_none() {
                return Err(SearchError::MissingOutput(o.clone()));
            }
        }
    }
    let mut data = data.clone();
    let mut subs: HashMap<String, Substitution> = HashMap::new();
    let mut stages = Vec::new();
    let mut prefix = Vec::new();
    let mut holds: Vec<(String, InputHold)> = Vec::new();
    for (k, stage) in plan.stages.iter().enumerate() {
        let sc = parse_scenario_with(&stage.scenario_text, lib, &subs)
            .map_err(|e| SearchError::Scenario(stage.name.clone(), e))?;
        let results = run_stage(lib, &sc, &data, &stage.outputs, stage.test_output.as_deref(), &holds, cfg)?;
        holds.extend(stage.outputs.iter().map(|o| (o.clone(), plan.signal_hold)));
        let winner = &results[0];
        let mut promoted = IndexMap::new();
        subs.clear();
        for (ph, rule) in &stage.promote {
            let p = match rule {
                PromoteRule::TemplateOf(sk) => {
                    let leaf = winner.structure.instance(sk).map(|i| i.leaf.clone());
                    Promoted::Template(leaf.ok_or_else(|| promotion_error(stage, ph))?)
                }
                PromoteRule::Constant(path) => Promoted::Constant(
                    plan::promoted_constant(&sc, &winner.structure, &winner.names, &winner.params, path)
                        .ok_or_else(|| promotion_error(stage, ph))?,
                ),
            };
            subs.insert(
                ph.clone(),
                match &p {
                    Promoted::Template(t) => Substitution::Template(t.clone()),
                    Promoted::Constant(v) => Substitution::Value(*v),
                },
            );
            promoted.insert(ph.clone(), p);
        }
        if !stage.simulated_signals.is_empty() {
            let traj = Simulator::new(&winner.model, &data)?.run(&winner.params, &cfg.solver);
            for sig in &stage.simulated_signals {
                let series = traj.series(sig).filter(|_| !traj.failed()).ok_or_else(|| SearchError::SignalFailed {
                    stage: stage.name.clone(),
                    id: winner.id.clone(),
                    signal: sig.clone(),
                })?;
                data.set_column(sig, series.to_vec())?;
            }
        }
        let tie = top_tie(&results);
        if k + 1 < plan.stages.len() {
            prefix.push(winner.id.clone());
        }
        stages.push(StageOutcome { name: stage.name.clone(), results, tie, promoted });
    }
    let mut results = stages.last().expect("plan has stages").results.clone();
    for r in &mut results {
        r.id = prefix.iter().chain([&r.id]).cloned().collect::<Vec<_>>().join("-");
    }
    Ok(MultiStageOutcome { stages, results, data })
}

fn promotion_error(stage: &StageSpec, ph: &str) -> SearchError {
    SearchError::Promotion { stage: stage.name.clone(), missing: vec![ph.to_string()], unused: Vec::new() }
}
