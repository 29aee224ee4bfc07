use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::assets;
use crate::dsl::{scenario_placeholders, ConstValue, Library, Scenario, Substitution};
use crate::modelspace::ConstSlot;
use crate::simulate::InputHold;

/// How a stage hands a result to the next stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromoteRule {
    /// Leaf template the winner selected for this skeleton.
    TemplateOf(String),
    /// Value of `entity.const` or `skeleton.const` in the winning model.
    Constant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    /// Scenario file, relative to the plan file or a bundled asset name.
    pub scenario: String,
    pub outputs: Vec<String>,
    /// Output scored on the test segment; defaults to the search setting
    /// when this stage observes it, else the stage's last output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_output: Option<String>,
    /// Placeholder of the next stage → rule producing its value.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub promote: IndexMap<String, PromoteRule>,
    /// Dataset columns replaced, for later stages, by the winner's
    /// simulation instead of the measurements.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub simulated_signals: Vec<String>,
    #[serde(skip)]
    pub scenario_text: String,
}

/// Ordered identification stages with declarative promotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
    /// Hold applied, in later stages, to inputs that an earlier stage fitted
    /// as outputs. Such signals are smooth, so linear interpolation avoids
    /// the lag a zero-order hold would add.
    #[serde(default = "linear")]
    pub signal_hold: InputHold,
}

fn linear() -> InputHold {
    InputHold::Linear
}

impl StagePlan {
    /// Parses plan JSON; `resolve` maps a scenario reference to its text.
    pub fn from_json(
        text: &str,
        mut resolve: impl FnMut(&str) -> Result<String, SearchError>,
    ) -> Result<StagePlan, SearchError> {
        let mut plan: StagePlan = serde_json::from_str(text).map_err(|e| SearchError::Plan(e.to_string()))?;
        for s in &mut plan.stages {
            s.scenario_text = resolve(&s.scenario)?;
        }
        Ok(plan)
    }

    /// Reads a plan file; scenario paths are taken relative to it, falling
    /// back to the bundled assets.
    pub fn load(path: &Path) -> Result<StagePlan, SearchError> {
        let text = std::fs::read_to_string(path).map_err(|e| SearchError::Io(path.display().to_string(), e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        StagePlan::from_json(&text, |name| read_scenario(dir, name))
    }

    /// The bundled two-stage plan.
    pub fn bundled_two_stage() -> StagePlan {
        StagePlan::from_json(assets::TWO_STAGE_PLAN, |name| {
            assets::bundled(name).map(str::to_string).ok_or_else(|| SearchError::Plan(format!("no bundled `{name}`")))
        })
        .expect("bundled plan is valid")
    }

    /// A one-stage plan around an already loaded scenario.
    pub fn single(scenario_text: &str, outputs: &[String]) -> StagePlan {
        StagePlan {
            stages: vec![StageSpec {
                name: "stage1".into(),
                scenario: String::new(),
                outputs: outputs.to_vec(),
                test_output: None,
                promote: IndexMap::new(),
                simulated_signals: Vec::new(),
                scenario_text: scenario_text.to_string(),
            }],
            signal_hold: InputHold::Linear,
        }
    }

    /// Checks, before any fitting, that every stage's placeholders are
    /// exactly the previous stage's promotions and that every rule refers to
    /// something the previous scenario declares.
    pub fn validate(&self, lib: &Library) -> Result<(), SearchError> {
        if self.stages.is_empty() {
            return Err(SearchError::Plan("plan has no stages".into()));
        }
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.outputs.is_empty() {
                return Err(SearchError::Plan(format!("stage `{}` lists no outputs", stage.name)));
            }
            let wanted: BTreeSet<String> = scenario_placeholders(&stage.scenario_text)
                .map_err(|e| SearchError::Scenario(stage.name.clone(), e))?
                .into_iter()
                .collect();
            let offered: BTreeSet<String> = match k {
                0 => BTreeSet::new(),
                _ => self.stages[k - 1].promote.keys().cloned().collect(),
            };
            if wanted != offered {
                return Err(SearchError::Promotion {
                    stage: stage.name.clone(),
                    missing: wanted.difference(&offered).cloned().collect(),
                    unused: offered.difference(&wanted).cloned().collect(),
                });
            }
            if k + 1 == self.stages.len() && !stage.promote.is_empty() {
                return Err(SearchError::Plan(format!("last stage `{}` promotes into nothing", stage.name)));
            }
            // Rules are checked against a scenario parsed with dummy values.
            let dummy: HashMap<String, Substitution> = match k {
                0 => HashMap::new(),
                _ => dummy_substitutions(&self.stages[k - 1], lib),
            };
            let sc = crate::dsl::parse_scenario_with(&stage.scenario_text, lib, &dummy)
                .map_err(|e| SearchError::Scenario(stage.name.clone(), e))?;
            for (ph, rule) in &stage.promote {
                check_rule(&sc, ph, rule).map_err(|why| SearchError::Promotion {
                    stage: stage.name.clone(),
                    missing: vec![format!("{ph}: {why}")],
                    unused: Vec::new(),
                })?;
            }
            for sig in &stage.simulated_signals {
                let observed = sc.entities.iter().any(|e| {
                    e.vars.iter().any(|v| v.role == crate::dsl::Role::Endogenous && e.column_of(&v.name) == *sig)
                });
                if !observed {
                    return Err(SearchError::Plan(format!(
                        "stage `{}` cannot simulate signal `{sig}`: no state observes it",
                        stage.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn read_scenario(dir: &Path, name: &str) -> Result<String, SearchError> {
    let p = dir.join(name);
    match std::fs::read_to_string(&p) {
        Ok(t) => Ok(t),
        Err(e) => assets::bundled(name).map(str::to_string).ok_or(SearchError::Io(p.display().to_string(), e)),
    }
}

/// Stand-in values that let a stage scenario parse during validation.
fn dummy_substitutions(prev: &StageSpec, lib: &Library) -> HashMap<String, Substitution> {
    let sc = crate::dsl::parse_scenario(&prev.scenario_text, lib).ok();
    prev.promote
        .iter()
        .map(|(ph, rule)| {
            let sub = match rule {
                PromoteRule::Constant(_) => Substitution::Value(1.0),
                PromoteRule::TemplateOf(sk) => {
                    let leaf = sc
                        .as_ref()
                        .and_then(|s| s.processes.iter().find(|p| p.name == *sk))
                        .and_then(|p| lib.leaves_under(&p.template).first().map(|l| l.path.clone()))
                        .unwrap_or_default();
                    Substitution::Template(leaf)
                }
            };
            (ph.clone(), sub)
        })
        .collect()
}

fn check_rule(sc: &Scenario, _ph: &str, rule: &PromoteRule) -> Result<(), String> {
    match rule {
        PromoteRule::TemplateOf(sk) => {
            sc.processes.iter().find(|p| p.name == *sk).map(|_| ()).ok_or(format!("no process `{sk}`"))
        }
        PromoteRule::Constant(path) => {
            let (owner, name) = path.split_once('.').ok_or(format!("`{path}` is not `owner.const`"))?;
            if let Some(e) = sc.entity(owner) {
                return e.const_binding(name).map(|_| ()).ok_or(format!("entity `{owner}` has no constant `{name}`"));
            }
            if sc.processes.iter().any(|p| p.name == owner) {
                return Ok(());
            }
            Err(format!("no entity or process `{owner}`"))
        }
    }
}

/// Value of `owner.const` in a fitted model: the fitted parameter when free,
/// the scenario or skeleton binding otherwise.
pub(super) fn promoted_constant(
    sc: &Scenario,
    structure: &crate::modelspace::CandidateStructure,
    names: &[String],
    params: &[f64],
    path: &str,
) -> Option<f64> {
    if let Some(i) = names.iter().position(|n| n == path) {
        return Some(params[i]);
    }
    let (owner, name) = path.split_once('.')?;
    if let Some(e) = sc.entity(owner) {
        return match e.const_value(name) {
            ConstValue::Fixed(v) => Some(v),
            ConstValue::Free => None,
        };
    }
    match structure.instance(owner)?.const_slot(name)? {
        ConstSlot::Fixed { value } => Some(value),
        ConstSlot::Free { .. } => None,
    }
}
