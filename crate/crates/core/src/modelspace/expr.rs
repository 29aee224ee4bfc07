use serde::Serialize;

use crate::dsl::BinOp;

/// Right-hand-side expression with every reference resolved to a slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CExpr {
    Lit(f64),
    State(usize),
    Input(usize),
    Param(usize),
    Neg(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Pow(Box<CExpr>, Box<CExpr>),
    Exp(Box<CExpr>),
}

impl CExpr {
    pub fn bin(op: BinOp, l: CExpr, r: CExpr) -> CExpr {
        CExpr::Bin(op, Box::new(l), Box::new(r))
    }

    /// Direct tree-walking evaluation.
    pub fn eval(&self, state: &[f64], inputs: &[f64], params: &[f64]) -> f64 {
        match self {
            CExpr::Lit(v) => *v,
            CExpr::State(i) => state[*i],
            CExpr::Input(i) => inputs[*i],
            CExpr::Param(i) => params[*i],
            CExpr::Neg(a) => -a.eval(state, inputs, params),
            CExpr::Bin(op, l, r) => {
                let (l, r) = (l.eval(state, inputs, params), r.eval(state, inputs, params));
                apply(*op, l, r)
            }
            CExpr::Pow(b, e) => power(b.eval(state, inputs, params), e.eval(state, inputs, params)),
            CExpr::Exp(a) => a.eval(state, inputs, params).exp(),
        }
    }

    /// Prefix (S-expression) rendering with slot names supplied by `name`.
    pub fn prefix(&self, name: &dyn Fn(&CExpr) -> String) -> String {
        match self {
            CExpr::Lit(_) | CExpr::State(_) | CExpr::Input(_) | CExpr::Param(_) => name(self),
            CExpr::Neg(a) => format!("(neg {})", a.prefix(name)),
            CExpr::Bin(op, l, r) => format!("({} {} {})", op.symbol(), l.prefix(name), r.prefix(name)),
            CExpr::Pow(b, e) => format!("(pow {} {})", b.prefix(name), e.prefix(name)),
            CExpr::Exp(a) => format!("(exp {})", a.prefix(name)),
        }
    }
}

/// `b^e`, with the square root taken directly since it is by far the most
/// common exponent and much cheaper than `powf`.
#[inline(always)]
fn power(b: f64, e: f64) -> f64 {
    if e == 0.5 {
        b.sqrt()
    } else {
        b.powf(e)
    }
}

#[inline(always)]
fn apply(op: BinOp, l: f64, r: f64) -> f64 {
    match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => l / r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Lit(f64),
    State(u32),
    Input(u32),
    Param(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Exp,
}

const STACK: usize = 16;

/// Postfix program for one expression, evaluated on a fixed-size stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

impl Program {
    pub fn compile(e: &CExpr) -> Program {
        let mut ops = Vec::new();
        let depth = emit(e, &mut ops);
        Program { ops, depth }
    }

    #[inline]
    pub fn eval(&self, state: &[f64], inputs: &[f64], params: &[f64]) -> f64 {
        if self.depth > STACK {
            return self.eval_heap(state, inputs, params);
        }
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Lit(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::State(i) => {
                    stack[sp] = state[i as usize];
                    sp += 1;
                }
                Op::Input(i) => {
                    stack[sp] = inputs[i as usize];
                    sp += 1;
                }
                Op::Param(i) => {
                    stack[sp] = params[i as usize];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Exp => stack[sp - 1] = stack[sp - 1].exp(),
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                    sp -= 1;
                    let (l, r) = (stack[sp - 1], stack[sp]);
                    stack[sp - 1] = match *op {
                        Op::Add => l + r,
                        Op::Sub => l - r,
                        Op::Mul => l * r,
                        Op::Div => l / r,
                        _ => power(l, r),
                    };
                }
            }
        }
        stack[0]
    }

    fn eval_heap(&self, state: &[f64], inputs: &[f64], params: &[f64]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match *op {
                Op::Lit(v) => stack.push(v),
                Op::State(i) => stack.push(state[i as usize]),
                Op::Input(i) => stack.push(inputs[i as usize]),
                Op::Param(i) => stack.push(params[i as usize]),
                Op::Neg => *stack.last_mut().unwrap() *= -1.0,
                Op::Exp => {
                    let top = stack.last_mut().unwrap();
                    *top = top.exp();
                }
                _ => {
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    stack.push(match *op {
                        Op::Add => l + r,
                        Op::Sub => l - r,
                        Op::Mul => l * r,
                        Op::Div => l / r,
                        _ => power(l, r),
                    });
                }
            }
        }
        stack[0]
    }
}

/// Emits postfix ops and returns the stack depth the subtree needs.
fn emit(e: &CExpr, ops: &mut Vec<Op>) -> usize {
    match e {
        CExpr::Lit(v) => {
            ops.push(Op::Lit(*v));
            1
        }
        CExpr::State(i) => {
            ops.push(Op::State(*i as u32));
            1
        }
        CExpr::Input(i) => {
            ops.push(Op::Input(*i as u32));
            1
        }
        CExpr::Param(i) => {
            ops.push(Op::Param(*i as u32));
            1
        }
        CExpr::Neg(a) => {
            let d = emit(a, ops);
            ops.push(Op::Neg);
            d
        }
        CExpr::Exp(a) => {
            let d = emit(a, ops);
            ops.push(Op::Exp);
            d
        }
        CExpr::Bin(op, l, r) => {
            let dl = emit(l, ops);
            let dr = emit(r, ops);
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
            dl.max(dr + 1)
        }
        CExpr::Pow(b, x) => {
            let dl = emit(b, ops);
            let dr = emit(x, ops);
            ops.push(Op::Pow);
            dl.max(dr + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_expr() -> impl Strategy<Value = CExpr> {
        let leaf = prop_oneof![
            (-3.0..3.0f64).prop_map(CExpr::Lit),
            (0..2usize).prop_map(CExpr::State),
            (0..1usize).prop_map(CExpr::Input),
            (0..2usize).prop_map(CExpr::Param),
        ];
        leaf.prop_recursive(6, 80, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| CExpr::Neg(Box::new(a))),
                inner.clone().prop_map(|a| CExpr::Exp(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| CExpr::Pow(Box::new(a), Box::new(b))),
                (
                    prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)],
                    inner.clone(),
                    inner
                )
                    .prop_map(|(op, a, b)| CExpr::bin(op, a, b)),
            ]
        })
    }

    proptest! {
        #[test]
        fn bytecode_matches_tree_walk(e in arb_expr(), s in prop::array::uniform2(-2.0..2.0f64), p in prop::array::uniform2(-2.0..2.0f64), u in -2.0..2.0f64) {
            let tree = e.eval(&s, &[u], &p);
            let code = Program::compile(&e).eval(&s, &[u], &p);
            prop_assert!(tree.to_bits() == code.to_bits() || (tree.is_nan() && code.is_nan()), "{tree} vs {code}");
        }
    }

    #[test]
    fn deep_expression_falls_back_to_heap_stack() {
        // right-leaning sum needs one stack slot per level
        let mut e = CExpr::Lit(1.0);
        for _ in 0..100 {
            e = CExpr::bin(BinOp::Add, CExpr::Lit(1.0), e);
        }
        let prog = Program::compile(&e);
        assert!(prog.depth > STACK);
        assert_eq!(prog.eval(&[], &[], &[]), 101.0);
    }
}
