use serde::Serialize;
use serde_json::{json, Value};

use super::expr::{CExpr, Program};
use super::{CandidateStructure, ConstSlot, ModelError, ProcessInstance};
use crate::dsl::print::fmt_num;
use crate::simulate::InputHold;
use crate::dsl::{BinOp, ConstValue, Expr, Range, Role, Scenario, Symbol};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVar {
    /// `entity.var`
    pub name: String,
    pub initial: f64,
    pub range: Option<Range>,
    /// Dataset column observing this state.
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputVar {
    pub name: String,
    pub column: String,
    /// Overrides the solver's input hold for this signal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hold: Option<InputHold>,
    /// Declared range; input samples are clamped into it.
    pub range: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    /// `entity.const` or `process.const`
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// One process equation's share of a state derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub skeleton: String,
    pub expr: CExpr,
}

/// An executable ODE system `dx/dt = f(x, u, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub id: String,
    pub states: Vec<StateVar>,
    pub inputs: Vec<InputVar>,
    pub params: Vec<ParamSpec>,
    /// Summed right-hand side per state; `Lit(0)` when nothing contributes.
    pub rhs: Vec<CExpr>,
    pub contributions: Vec<Vec<Contribution>>,
    programs: Vec<Program>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompileOptions {
    /// Reject initial values outside declared variable ranges.
    pub check_ranges: bool,
}

pub fn compile(structure: &CandidateStructure, scenario: &Scenario) -> Result<CompiledModel, ModelError> {
    compile_with(structure, scenario, CompileOptions::default())
}

#[derive(Clone, Copy)]
enum Key<'a> {
    Entity(&'a str, &'a str),
    Process(&'a str, &'a str),
}

pub fn compile_with(
    structure: &CandidateStructure,
    scenario: &Scenario,
    opts: CompileOptions,
) -> Result<CompiledModel, ModelError> {
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for e in &scenario.entities {
        for v in &e.vars {
            let name = format!("{}.{}", e.name, v.name);
            let column = e.column_of(&v.name);
            match v.role {
                Role::Endogenous => {
                    let initial = v.initial.expect("validated: endogenous vars have initial values");
                    let range = v.range;
                    if opts.check_ranges {
                        if let Some(r) = range {
                            if !r.contains(initial) {
                                return Err(ModelError::InitialOutOfRange { var: name, value: initial, range: r });
                            }
                        }
                    }
                    states.push(StateVar { name, initial, range, column });
                }
                Role::Exogenous => inputs.push(InputVar { name, column, hold: None, range: v.range }),
            }
        }
    }

    // Collect referenced free constants, then order them: entity constants in
    // declaration order, then process constants in skeleton order.
    let mut used_entity: Vec<(String, String)> = Vec::new();
    let mut used_process: Vec<(String, String)> = Vec::new();
    for inst in &structure.instances {
        for eq in &inst.equations {
            if !states.iter().any(|s| s.name == target_name(inst, eq)) {
                continue;
            }
            eq.rhs.for_each_ref(&mut |sym, _| match resolve_key(inst, sym) {
                Key::Entity(e, c) => {
                    let ent = scenario.entity(e).expect("bound entities exist");
                    if ent.var(c).is_none() && ent.const_value(c) == ConstValue::Free {
                        let k = (e.to_string(), c.to_string());
                        if !used_entity.contains(&k) {
                            used_entity.push(k);
                        }
                    }
                }
                Key::Process(s, c) => {
                    if let Some(ConstSlot::Free { .. }) = inst.const_slot(c) {
                        let k = (s.to_string(), c.to_string());
                        if !used_process.contains(&k) {
                            used_process.push(k);
                        }
                    }
                }
            });
        }
    }
    let mut params = Vec::new();
    for e in &scenario.entities {
        for c in &e.consts {
            if used_entity.iter().any(|(en, cn)| *en == e.name && *cn == c.name) {
                let range = c.range;
                params.push(ParamSpec { name: format!("{}.{}", e.name, c.name), lo: range.lo, hi: range.hi });
            }
        }
    }
    for inst in &structure.instances {
        for (c, slot) in &inst.consts {
            if let ConstSlot::Free { range } = slot {
                if used_process.iter().any(|(s, cn)| *s == inst.skeleton && cn == c) {
                    params.push(ParamSpec { name: format!("{}.{}", inst.skeleton, c), lo: range.lo, hi: range.hi });
                }
            }
        }
    }

    let mut contributions: Vec<Vec<Contribution>> = vec![Vec::new(); states.len()];
    for inst in &structure.instances {
        for eq in &inst.equations {
            let target = target_name(inst, eq);
            // Equations driving exogenous variables have nothing to integrate.
            let Some(si) = states.iter().position(|s| s.name == target) else { continue };
            let expr = lower(&eq.rhs, inst, scenario, &states, &inputs, &params);
            contributions[si].push(Contribution { skeleton: inst.skeleton.clone(), expr });
        }
    }
    let rhs: Vec<CExpr> = contributions
        .iter()
        .map(|terms| {
            let mut it = terms.iter().map(|c| c.expr.clone());
            match it.next() {
                None => CExpr::Lit(0.0),
                Some(first) => it.fold(first, |acc, t| CExpr::bin(BinOp::Add, acc, t)),
            }
        })
        .collect();
    let programs = rhs.iter().map(Program::compile).collect();
    Ok(CompiledModel { id: structure.id.clone(), states, inputs, params, rhs, contributions, programs })
}

fn target_name(inst: &ProcessInstance, eq: &crate::dsl::Equation) -> String {
    let ent = inst.entity_for(&eq.target.param).expect("surviving equations are fully bound");
    format!("{ent}.{}", eq.target.var)
}

fn resolve_key<'a>(inst: &'a ProcessInstance, sym: &'a Symbol) -> Key<'a> {
    match sym {
        Symbol::Property { param, name } => {
            Key::Entity(inst.entity_for(param).expect("surviving equations are fully bound"), name)
        }
        Symbol::Const { name } => Key::Process(&inst.skeleton, name),
    }
}

fn lower(
    e: &Expr,
    inst: &ProcessInstance,
    scenario: &Scenario,
    states: &[StateVar],
    inputs: &[InputVar],
    params: &[ParamSpec],
) -> CExpr {
    let rec = |x: &Expr| lower(x, inst, scenario, states, inputs, params);
    match e {
        Expr::Num { value } => CExpr::Lit(*value),
        Expr::Neg { arg } => CExpr::Neg(Box::new(rec(arg))),
        Expr::Exp { arg } => CExpr::Exp(Box::new(rec(arg))),
        Expr::Pow { base, exponent } => CExpr::Pow(Box::new(rec(base)), Box::new(rec(exponent))),
        Expr::Bin { op, lhs, rhs } => CExpr::bin(*op, rec(lhs), rec(rhs)),
        Expr::Ref { symbol, .. } => {
            let param_slot = |name: String| {
                CExpr::Param(params.iter().position(|p| p.name == name).expect("free constants were collected"))
            };
            match resolve_key(inst, symbol) {
                Key::Entity(ent, prop) => {
                    let full = format!("{ent}.{prop}");
                    if let Some(i) = states.iter().position(|s| s.name == full) {
                        return CExpr::State(i);
                    }
                    if let Some(i) = inputs.iter().position(|s| s.name == full) {
                        return CExpr::Input(i);
                    }
                    match scenario.entity(ent).expect("bound").const_value(prop) {
                        ConstValue::Fixed(v) => CExpr::Lit(v),
                        ConstValue::Free => param_slot(full),
                    }
                }
                Key::Process(sk, name) => match inst.const_slot(name).expect("validated const") {
                    ConstSlot::Fixed { value } => CExpr::Lit(value),
                    ConstSlot::Free { .. } => param_slot(format!("{sk}.{name}")),
                },
            }
        }
    }
}

impl CompiledModel {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.params.iter().map(|p| (p.lo, p.hi)).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.initial).collect()
    }

    /// Evaluates `dx/dt` into `out`.
    #[inline]
    pub fn eval_rhs_into(&self, state: &[f64], inputs: &[f64], params: &[f64], out: &mut [f64]) {
        for (o, prog) in out.iter_mut().zip(&self.programs) {
            *o = prog.eval(state, inputs, params);
        }
    }

    /// Evaluates `dx/dt`. Domain errors (e.g. a negative base under a
    /// fractional power) surface as non-finite components.
    pub fn eval_rhs(&self, state: &[f64], inputs: &[f64], params: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.states.len(), "state length");
        assert_eq!(inputs.len(), self.inputs.len(), "input length");
        assert_eq!(params.len(), self.params.len(), "parameter length");
        let mut out = vec![0.0; self.states.len()];
        self.eval_rhs_into(state, inputs, params, &mut out);
        out
    }

    /// Prefix-notation name for a leaf of a compiled expression.
    pub fn slot_name(&self, e: &CExpr) -> String {
        match e {
            CExpr::Lit(v) => fmt_num(*v),
            CExpr::State(i) => self.states[*i].name.clone(),
            CExpr::Input(i) => self.inputs[*i].name.clone(),
            CExpr::Param(i) => self.params[*i].name.clone(),
            _ => unreachable!("only leaves have slot names"),
        }
    }

    /// JSON export: states, inputs, parameter bounds and prefix-notation RHS.
    pub fn to_json(&self) -> Value {
        let name = |e: &CExpr| self.slot_name(e);
        json!({
            "id": self.id,
            "states": self.states,
            "inputs": self.inputs,
            "params": self.params,
            "rhs": self.states.iter().zip(&self.rhs).map(|(s, e)| json!({
                "state": s.name,
                "prefix": e.prefix(&name),
            })).collect::<Vec<_>>(),
        })
    }
}
