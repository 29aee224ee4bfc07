//! Canonical text rendering of libraries and expressions, and the JSON AST
//! dump.

use std::fmt::Write;

use serde_json::{json, Value};

use super::ast::*;

/// Shortest text that parses back to exactly `v`.
pub fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin { op: BinOp::Add | BinOp::Sub, .. } => 1,
        Expr::Bin { .. } => 2,
        Expr::Neg { .. } => 3,
        Expr::Num { value } if *value < 0.0 => 3,
        _ => 4,
    }
}

/// Renders an expression in DSL syntax. References are printed through
/// `name_of`, so callers can substitute values or rename symbols.
pub fn write_expr(out: &mut String, e: &Expr, name_of: &dyn Fn(&Symbol) -> String) {
    match e {
        Expr::Num { value } => out.push_str(&fmt_num(*value)),
        Expr::Ref { symbol, .. } => out.push_str(&name_of(symbol)),
        Expr::Neg { arg } => {
            out.push('-');
            wrap(out, arg, prec(arg) < 3, name_of);
        }
        Expr::Bin { op, lhs, rhs } => {
            let p = prec(e);
            wrap(out, lhs, prec(lhs) < p, name_of);
            let _ = write!(out, " {} ", op.symbol());
            wrap(out, rhs, prec(rhs) <= p, name_of);
        }
        Expr::Pow { base, exponent } => {
            out.push_str("pow(");
            write_expr(out, base, name_of);
            out.push_str(", ");
            write_expr(out, exponent, name_of);
            out.push(')');
        }
        Expr::Exp { arg } => {
            out.push_str("exp(");
            write_expr(out, arg, name_of);
            out.push(')');
        }
    }
}

fn wrap(out: &mut String, e: &Expr, parens: bool, name_of: &dyn Fn(&Symbol) -> String) {
    if parens {
        out.push('(');
    }
    write_expr(out, e, name_of);
    if parens {
        out.push(')');
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, &|sym| sym.to_string());
    s
}

fn range_str(r: &Range) -> String {
    format!("<{}, {}>", fmt_num(r.lo), fmt_num(r.hi))
}

fn const_list(consts: &[ConstDecl]) -> String {
    consts
        .iter()
        .map(|c| format!("{} {{range: {}}}", c.name, range_str(&c.range)))
        .collect::<Vec<_>>()
        .join(",\n            ")
}

/// Canonical library text. Parsing it yields a library equal to `lib`.
pub fn print_library(lib: &Library) -> String {
    let mut out = String::new();
    for e in lib.entities.values() {
        let _ = writeln!(out, "template entity {} {{", e.name);
        if !e.vars.is_empty() {
            let vars: Vec<String> = e
                .vars
                .iter()
                .map(|v| match &v.range {
                    Some(r) => format!("{} {{aggregation: sum, range: {}}}", v.name, range_str(r)),
                    None => v.name.clone(),
                })
                .collect();
            let _ = writeln!(out, "    vars: {};", vars.join(", "));
        }
        if !e.consts.is_empty() {
            let _ = writeln!(out, "    consts: {};", const_list(&e.consts));
        }
        out.push_str("}\n\n");
    }
    for p in lib.processes.values() {
        let _ = write!(out, "template process {}", p.name);
        match &p.parent {
            None => {
                let params: Vec<String> = p.params.iter().map(|ep| format!("{}: {}", ep.name, ep.entity)).collect();
                let _ = write!(out, "({})", params.join(", "));
            }
            Some(parent) => {
                let _ = write!(out, " : {parent}");
            }
        }
        out.push_str(" {\n");
        if !p.own_consts.is_empty() {
            let _ = writeln!(out, "    consts: {};", const_list(&p.own_consts));
        }
        if !p.own_equations.is_empty() {
            let eqs: Vec<String> = p
                .own_equations
                .iter()
                .map(|eq| format!("td({}.{}) = {}", eq.target.param, eq.target.var, expr_to_string(&eq.rhs)))
                .collect();
            let _ = writeln!(out, "    equations: {};", eqs.join(",\n               "));
        }
        out.push_str("}\n\n");
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

fn template_json(lib: &Library, p: &ProcessTemplate) -> Value {
    let children: Vec<Value> = p
        .children
        .iter()
        .map(|c| template_json(lib, &lib.processes[c]))
        .collect();
    json!({
        "name": p.name,
        "path": p.path,
        "params": p.params,
        "consts": p.own_consts,
        "equations": p.own_equations.iter().map(|eq| json!({
            "target": format!("{}.{}", eq.target.param, eq.target.var),
            "rhs": expr_to_string(&eq.rhs),
            "ast": eq.rhs,
        })).collect::<Vec<_>>(),
        "children": children,
    })
}

/// JSON dump of a library: entity templates and one tree per hierarchy.
/// Keys appear in a fixed order.
pub fn library_json(lib: &Library) -> Value {
    json!({
        "entity_templates": lib.entities.values().collect::<Vec<_>>(),
        "process_hierarchies": lib.roots().map(|r| template_json(lib, r)).collect::<Vec<_>>(),
    })
}

pub fn scenario_json(sc: &Scenario) -> Value {
    serde_json::to_value(sc).expect("scenario serializes")
}
