use indexmap::IndexMap;
use serde::Serialize;

use super::Pos;

/// Closed numeric interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarDecl {
    pub name: String,
    pub aggregation: Aggregation,
    pub range: Option<Range>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstDecl {
    pub name: String,
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityTemplate {
    pub name: String,
    pub vars: Vec<VarDecl>,
    pub consts: Vec<ConstDecl>,
}

impl EntityTemplate {
    pub fn var(&self, name: &str) -> Option<&VarDecl> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn const_decl(&self, name: &str) -> Option<&ConstDecl> {
        self.consts.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityParam {
    pub name: String,
    pub entity: String,
}

/// A reference inside a template expression.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Symbol {
    /// `param.property`: a var or const of the entity bound to `param`.
    Property { param: String, name: String },
    /// A process constant.
    Const { name: String },
}

impl std::fmt::Display for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Symbol::Property { param, name } => write!(f, "{param}.{name}"),
            Symbol::Const { name } => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Expr {
    Num { value: f64 },
    Ref {
        symbol: Symbol,
        #[serde(skip)]
        pos: Pos,
    },
    Neg { arg: Box<Expr> },
    Bin { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Pow { base: Box<Expr>, exponent: Box<Expr> },
    Exp { arg: Box<Expr> },
}

impl Expr {
    /// Pre-order walk over every reference in the tree.
    pub fn for_each_ref<'a>(&'a self, f: &mut impl FnMut(&'a Symbol, Pos)) {
        match self {
            Expr::Num { .. } => {}
            Expr::Ref { symbol, pos } => f(symbol, *pos),
            Expr::Neg { arg } | Expr::Exp { arg } => arg.for_each_ref(f),
            Expr::Bin { lhs, rhs, .. } => {
                lhs.for_each_ref(f);
                rhs.for_each_ref(f);
            }
            Expr::Pow { base, exponent } => {
                base.for_each_ref(f);
                exponent.for_each_ref(f);
            }
        }
    }

    pub fn refs(&self) -> Vec<&Symbol> {
        let mut out = Vec::new();
        self.for_each_ref(&mut |s, _| out.push(s));
        out
    }
}

/// Target of a `td(param.var) = ...` equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarRef {
    pub param: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equation {
    pub target: VarRef,
    pub rhs: Expr,
    #[serde(skip)]
    pub pos: Pos,
}

impl Equation {
    /// Entity params this equation touches, target included.
    pub fn params_used(&self) -> Vec<&str> {
        let mut out = vec![self.target.param.as_str()];
        for s in self.rhs.refs() {
            if let Symbol::Property { param, .. } = s {
                if !out.contains(&param.as_str()) {
                    out.push(param);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessTemplate {
    pub name: String,
    /// Dotted path from the hierarchy root, e.g. `Outflow.SquareRoot`.
    pub path: String,
    pub parent: Option<String>,
    pub children: Vec<String>,
    /// Inherited from the hierarchy root.
    pub params: Vec<EntityParam>,
    /// Constants declared on this template itself.
    pub own_consts: Vec<ConstDecl>,
    /// Inherited constants followed by own constants.
    pub consts: Vec<ConstDecl>,
    /// Equations declared on this template itself.
    pub own_equations: Vec<Equation>,
    /// Inherited equations followed by own equations.
    pub equations: Vec<Equation>,
    #[serde(skip)]
    pub pos: Pos,
}

impl ProcessTemplate {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn const_decl(&self, name: &str) -> Option<&ConstDecl> {
        self.consts.iter().find(|c| c.name == name)
    }
}

/// Reusable domain knowledge: entity templates and process hierarchies.
///
/// Process templates are keyed by their dotted path so that leaves of
/// different hierarchies may share a name (`ValveTransmission.Linear`,
/// `Outflow.Linear`). Both maps keep declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Library {
    pub entities: IndexMap<String, EntityTemplate>,
    pub processes: IndexMap<String, ProcessTemplate>,
}

impl Library {
    pub fn roots(&self) -> impl Iterator<Item = &ProcessTemplate> {
        self.processes.values().filter(|p| p.is_root())
    }

    /// Leaves at or below `path`, in declaration order.
    pub fn leaves_under(&self, path: &str) -> Vec<&ProcessTemplate> {
        let prefix = format!("{path}.");
        self.processes
            .values()
            .filter(|p| p.is_leaf() && (p.path == path || p.path.starts_with(&prefix)))
            .collect()
    }

    /// Looks a process template up by dotted path or, when unambiguous, by
    /// plain name.
    pub fn find_process(&self, name: &str) -> Result<&ProcessTemplate, Vec<&str>> {
        if let Some(p) = self.processes.get(name) {
            return Ok(p);
        }
        let hits: Vec<&ProcessTemplate> = self.processes.values().filter(|p| p.name == name).collect();
        match hits.as_slice() {
            [one] => Ok(one),
            _ => Err(hits.iter().map(|p| p.path.as_str()).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Endogenous,
    Exogenous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarBinding {
    pub name: String,
    pub role: Role,
    pub initial: Option<f64>,
    /// Dataset column carrying this variable; defaults to `entity.var`.
    pub column: Option<String>,
    /// Declared range, copied from the entity template.
    pub range: Option<Range>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ConstValue {
    Fixed(f64),
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstBinding {
    pub name: String,
    pub value: ConstValue,
    /// Declared range, copied from the template.
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityInstance {
    pub name: String,
    pub template: String,
    pub vars: Vec<VarBinding>,
    pub consts: Vec<ConstBinding>,
}

impl EntityInstance {
    pub fn var(&self, name: &str) -> Option<&VarBinding> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn const_value(&self, name: &str) -> ConstValue {
        self.const_binding(name).map(|c| c.value).unwrap_or(ConstValue::Free)
    }

    pub fn const_binding(&self, name: &str) -> Option<&ConstBinding> {
        self.consts.iter().find(|c| c.name == name)
    }

    pub fn column_of(&self, var: &str) -> String {
        self.var(var)
            .and_then(|v| v.column.clone())
            .unwrap_or_else(|| format!("{}.{}", self.name, var))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessSkeleton {
    pub name: String,
    /// Entity instances in template-param order; may be a prefix.
    pub args: Vec<String>,
    /// Dotted path of the declared template (any node of a hierarchy).
    pub template: String,
    pub consts: Vec<ConstBinding>,
    /// True when fewer entities are bound than the template declares.
    pub partial: bool,
}

/// One identification task: concrete entities and the known process layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Scenario {
    pub entities: Vec<EntityInstance>,
    pub processes: Vec<ProcessSkeleton>,
}

impl Scenario {
    pub fn entity(&self, name: &str) -> Option<&EntityInstance> {
        self.entities.iter().find(|e| e.name == name)
    }
}
