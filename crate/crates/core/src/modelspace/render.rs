use std::fmt::Write;

use super::compile::CompiledModel;
use super::expr::CExpr;
use super::{CandidateStructure, ConstSlot};
use crate::dsl::print::fmt_num;
use crate::dsl::BinOp;

/// Human-readable rendering of a fitted structure: the process view with
/// resolved constants, then the flattened ODEs with parameter values
/// substituted.
pub fn format_model(structure: &CandidateStructure, model: &CompiledModel, params: &[f64]) -> String {
    assert_eq!(params.len(), model.n_params(), "one value per free parameter");
    let mut out = String::new();
    let _ = writeln!(out, "model {}", structure.id);
    out.push_str("processes:\n");
    for inst in &structure.instances {
        let args: Vec<String> = inst.bindings.iter().map(|(p, e)| format!("{p}={e}")).collect();
        let _ = write!(out, "  {}({}) : {}", inst.skeleton, args.join(", "), inst.leaf);
        let consts: Vec<String> = inst
            .consts
            .iter()
            .map(|(name, slot)| {
                let v = match slot {
                    ConstSlot::Fixed { value } => *value,
                    ConstSlot::Free { .. } => model
                        .param_index(&format!("{}.{name}", inst.skeleton))
                        .map(|i| params[i])
                        .unwrap_or(f64::NAN),
                };
                format!("{name}={}", fmt_num(v))
            })
            .collect();
        if !consts.is_empty() {
            let _ = write!(out, " {{{}}}", consts.join(", "));
        }
        out.push('\n');
    }
    if !model.params.is_empty() {
        out.push_str("parameters:\n");
        for (p, v) in model.params.iter().zip(params) {
            let _ = writeln!(out, "  {} = {}", p.name, fmt_num(*v));
        }
    }
    out.push_str("equations:\n");
    for (si, s) in model.states.iter().enumerate() {
        let _ = write!(out, "  td({}) = ", s.name);
        let terms = &model.contributions[si];
        if terms.is_empty() {
            out.push('0');
        }
        for (k, term) in terms.iter().enumerate() {
            match (k, strip_leading_neg(&term.expr)) {
                (0, _) => write_compact(&mut out, &term.expr, model, params),
                (_, Some(positive)) => {
                    out.push_str(" - ");
                    write_compact(&mut out, &positive, model, params);
                }
                (_, None) => {
                    out.push_str(" + ");
                    write_compact(&mut out, &term.expr, model, params);
                }
            }
        }
        out.push('\n');
    }
    out
}

/// `-x * y / z` becomes `x * y / z`; anything else is left alone.
fn strip_leading_neg(e: &CExpr) -> Option<CExpr> {
    match e {
        CExpr::Neg(a) => Some((**a).clone()),
        CExpr::Bin(op @ (BinOp::Mul | BinOp::Div), l, r) => {
            strip_leading_neg(l).map(|l| CExpr::Bin(*op, Box::new(l), r.clone()))
        }
        _ => None,
    }
}

fn prec(e: &CExpr) -> u8 {
    match e {
        CExpr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        CExpr::Bin(..) => 2,
        CExpr::Neg(_) => 3,
        CExpr::Lit(v) if *v < 0.0 => 3,
        _ => 4,
    }
}

fn write_compact(out: &mut String, e: &CExpr, model: &CompiledModel, params: &[f64]) {
    let wrap = |out: &mut String, x: &CExpr, parens: bool| {
        if parens {
            out.push('(');
        }
        write_compact(out, x, model, params);
        if parens {
            out.push(')');
        }
    };
    match e {
        CExpr::Lit(v) => out.push_str(&fmt_num(*v)),
        CExpr::Param(i) => out.push_str(&fmt_num(params[*i])),
        CExpr::State(_) | CExpr::Input(_) => out.push_str(&model.slot_name(e)),
        CExpr::Neg(a) => {
            out.push('-');
            wrap(out, a, prec(a) < 3);
        }
        CExpr::Bin(op, l, r) => {
            let p = prec(e);
            wrap(out, l, prec(l) < p);
            match op {
                BinOp::Add | BinOp::Sub => {
                    let _ = write!(out, " {} ", op.symbol());
                }
                _ => out.push(op.symbol()),
            }
            wrap(out, r, prec(r) <= p);
        }
        CExpr::Pow(b, x) => {
            out.push_str("pow(");
            write_compact(out, b, model, params);
            out.push(',');
            write_compact(out, x, model, params);
            out.push(')');
        }
        CExpr::Exp(a) => {
            out.push_str("exp(");
            write_compact(out, a, model, params);
            out.push(')');
        }
    }
}
