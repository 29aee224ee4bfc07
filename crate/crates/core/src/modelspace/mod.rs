//! From library + scenario to executable ODE systems.
//!
//! Templates are instantiated per process skeleton, candidate structures are
//! the Cartesian product of the per-skeleton alternatives, and each structure
//! compiles to a [`CompiledModel`] whose right-hand sides sum the
//! contributions of every process touching a state variable.

mod compile;
mod expr;
mod render;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::dsl::{ConstValue, Equation, Library, Range, Scenario};

pub use compile::{compile, compile_with, CompileOptions, CompiledModel, InputVar, ParamSpec, StateVar};
pub use expr::{CExpr, Program};
pub use render::format_model;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("process `{skeleton}`: template `{template}` has no leaf templates")]
    NoLeaves { skeleton: String, template: String },
    #[error("process `{skeleton}`: every equation of `{leaf}` references an unbound entity parameter")]
    AllEquationsDropped { skeleton: String, leaf: String },
    #[error("process `{skeleton}` refers to unknown entity `{entity}`")]
    UnknownEntity { skeleton: String, entity: String },
    #[error("initial value {value} of `{var}` lies outside its range <{}, {}>", range.lo, range.hi)]
    InitialOutOfRange { var: String, value: f64, range: Range },
    #[error("expected {expected} parameter values, got {got}")]
    ParamCount { expected: usize, got: usize },
}

/// Binding of a process constant inside an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstSlot {
    Fixed { value: f64 },
    Free { range: Range },
}

/// One concrete alternative for a process skeleton.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessInstance {
    pub skeleton: String,
    /// Dotted path of the leaf template.
    pub leaf: String,
    pub leaf_name: String,
    /// Whether the skeleton declared a non-leaf template, i.e. whether this
    /// instance is one of several alternatives.
    pub alternative: bool,
    /// (template param, entity instance), possibly a prefix of the params.
    pub bindings: Vec<(String, String)>,
    pub consts: Vec<(String, ConstSlot)>,
    /// Equations surviving partial binding.
    pub equations: Vec<Equation>,
}

impl ProcessInstance {
    pub fn entity_for(&self, param: &str) -> Option<&str> {
        self.bindings.iter().find(|(p, _)| p == param).map(|(_, e)| e.as_str())
    }

    pub fn const_slot(&self, name: &str) -> Option<ConstSlot> {
        self.consts.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

/// Per-skeleton alternatives, in scenario declaration order.
pub type Instances = IndexMap<String, Vec<ProcessInstance>>;

/// Expands every skeleton into one instance per leaf at or below its declared
/// template, applying the scenario's constant bindings.
pub fn instantiate(lib: &Library, scenario: &Scenario) -> Result<Instances, ModelError> {
    let mut out = Instances::new();
    for sk in &scenario.processes {
        for arg in &sk.args {
            if scenario.entity(arg).is_none() {
                return Err(ModelError::UnknownEntity { skeleton: sk.name.clone(), entity: arg.clone() });
            }
        }
        let declared = &lib.processes[&sk.template];
        let leaves = lib.leaves_under(&sk.template);
        if leaves.is_empty() {
            return Err(ModelError::NoLeaves { skeleton: sk.name.clone(), template: sk.template.clone() });
        }
        let mut alts = Vec::with_capacity(leaves.len());
        for leaf in leaves {
            let bindings: Vec<(String, String)> = leaf
                .params
                .iter()
                .zip(&sk.args)
                .map(|(p, e)| (p.name.clone(), e.clone()))
                .collect();
            let bound = |param: &str| bindings.iter().any(|(p, _)| p == param);
            let equations: Vec<Equation> = leaf
                .equations
                .iter()
                .filter(|eq| eq.params_used().iter().all(|p| bound(p)))
                .cloned()
                .collect();
            if equations.is_empty() {
                return Err(ModelError::AllEquationsDropped { skeleton: sk.name.clone(), leaf: leaf.path.clone() });
            }
            let consts = leaf
                .consts
                .iter()
                .map(|c| {
                    let slot = match sk.consts.iter().find(|b| b.name == c.name).map(|b| b.value) {
                        Some(ConstValue::Fixed(value)) => ConstSlot::Fixed { value },
                        _ => ConstSlot::Free { range: c.range },
                    };
                    (c.name.clone(), slot)
                })
                .collect();
            alts.push(ProcessInstance {
                skeleton: sk.name.clone(),
                leaf: leaf.path.clone(),
                leaf_name: leaf.name.clone(),
                alternative: !declared.is_leaf(),
                bindings,
                consts,
                equations,
            });
        }
        out.insert(sk.name.clone(), alts);
    }
    Ok(out)
}

/// One selection of an alternative per skeleton.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateStructure {
    /// Leaf initials of the skeletons that had alternatives, e.g. `S-L`.
    pub id: String,
    pub instances: Vec<ProcessInstance>,
}

impl CandidateStructure {
    pub fn new(instances: Vec<ProcessInstance>) -> Self {
        let initial = |p: &ProcessInstance| p.leaf_name.chars().next().map(String::from).unwrap_or_default();
        let mut parts: Vec<String> = instances.iter().filter(|p| p.alternative).map(initial).collect();
        if parts.is_empty() {
            parts = instances.iter().map(initial).collect();
        }
        CandidateStructure { id: parts.join("-"), instances }
    }

    pub fn instance(&self, skeleton: &str) -> Option<&ProcessInstance> {
        self.instances.iter().find(|p| p.skeleton == skeleton)
    }
}

/// Full Cartesian product of the alternatives. The first skeleton varies
/// slowest; alternatives follow library declaration order.
pub fn enumerate(instances: &Instances) -> Vec<CandidateStructure> {
    let lists: Vec<&Vec<ProcessInstance>> = instances.values().collect();
    if lists.iter().any(|l| l.is_empty()) {
        return Vec::new();
    }
    let total: usize = lists.iter().map(|l| l.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; lists.len()];
    for _ in 0..total {
        out.push(CandidateStructure::new(
            lists.iter().zip(&idx).map(|(l, &i)| l[i].clone()).collect(),
        ));
        for k in (0..lists.len()).rev() {
            idx[k] += 1;
            if idx[k] < lists[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}
