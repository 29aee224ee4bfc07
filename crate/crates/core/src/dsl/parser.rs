//! Recursive-descent parser for libraries (`.pbl`) and scenarios (`.pbs`).
//!
//! Parsing and resolution happen in one call: the public entry points only
//! ever hand out fully validated ASTs.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;

use super::ast::*;
use super::error::{DslError, ErrorKind};
use super::lexer::{tokenize, Tok, Token};
use super::Pos;

/// Value substituted for a `$name` placeholder in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Substitution {
    Value(f64),
    Template(String),
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

type PResult<T> = Result<T, DslError>;

impl Parser {
    fn new(text: &str) -> PResult<Self> {
        Ok(Parser { toks: tokenize(text)?, at: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.at + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at < self.toks.len() - 1 {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> DslError {
        let t = &self.toks[self.at];
        let err = DslError::new(ErrorKind::Syntax, t.pos, format!("expected {expected}, found {}", t.tok));
        match &t.tok {
            Tok::Ident(s) => err.with_symbol(s),
            _ => err,
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Pos> {
        if *self.peek() == tok {
            Ok(self.next().pos)
        } else {
            Err(self.error(&tok.to_string()))
        }
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if *self.peek() == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.next().pos;
                Ok((s, pos))
            }
            _ => Err(self.error("identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<Pos> {
        match self.peek() {
            Tok::Ident(s) if s == kw => Ok(self.next().pos),
            _ => Err(self.error(&format!("`{kw}`"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = self.eat(Tok::Minus);
        match self.peek() {
            Tok::Number(n) => {
                let n = *n;
                self.next();
                Ok(if neg { -n } else { n })
            }
            _ => Err(self.error("number")),
        }
    }

    fn range(&mut self) -> PResult<Range> {
        let pos = self.expect(Tok::Lt)?;
        let lo = self.signed_number()?;
        self.expect(Tok::Comma)?;
        let hi = self.signed_number()?;
        self.expect(Tok::Gt)?;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(DslError::new(
                ErrorKind::MalformedRange,
                pos,
                format!("range <{lo}, {hi}> must satisfy lo < hi"),
            ));
        }
        Ok(Range { lo, hi })
    }

    /// Separator inside `{ ... }` attribute lists: `,` or `;`.
    fn attr_sep(&mut self) -> bool {
        self.eat(Tok::Comma) || self.eat(Tok::Semi)
    }

    fn dotted_name(&mut self) -> PResult<(String, Pos)> {
        let (mut name, pos) = self.ident()?;
        while *self.peek() == Tok::Dot {
            self.next();
            let (part, _) = self.ident()?;
            name.push('.');
            name.push_str(&part);
        }
        Ok((name, pos))
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.term()?;
            lhs = Expr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(Tok::Minus) {
            return Ok(Expr::Neg { arg: Box::new(self.unary()?) });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Number(value) => {
                self.next();
                Ok(Expr::Num { value })
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) if name == "pow" && *self.peek_at(1) == Tok::LParen => {
                self.next();
                self.next();
                let base = self.expr()?;
                self.expect(Tok::Comma)?;
                let exponent = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Pow { base: Box::new(base), exponent: Box::new(exponent) })
            }
            Tok::Ident(name) if name == "exp" && *self.peek_at(1) == Tok::LParen => {
                self.next();
                self.next();
                let arg = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Exp { arg: Box::new(arg) })
            }
            Tok::Ident(name) => {
                let pos = self.next().pos;
                if self.eat(Tok::Dot) {
                    let (prop, _) = self.ident()?;
                    Ok(Expr::Ref { symbol: Symbol::Property { param: name, name: prop }, pos })
                } else {
                    Ok(Expr::Ref { symbol: Symbol::Const { name }, pos })
                }
            }
            _ => Err(self.error("expression")),
        }
    }

    fn equation(&mut self) -> PResult<Equation> {
        let pos = self.keyword("td")?;
        self.expect(Tok::LParen)?;
        let (param, _) = self.ident()?;
        self.expect(Tok::Dot)?;
        let (var, _) = self.ident()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::Eq)?;
        let rhs = self.expr()?;
        Ok(Equation { target: VarRef { param, var }, rhs, pos })
    }
}

// ---------------------------------------------------------------------------
// Library
// ---------------------------------------------------------------------------

struct RawProcess {
    name: String,
    pos: Pos,
    params: Option<Vec<(EntityParam, Pos)>>,
    parent: Option<(String, Pos)>,
    consts: Vec<(ConstDecl, Pos)>,
    equations: Vec<Equation>,
}

fn parse_const_decl(p: &mut Parser) -> PResult<(ConstDecl, Pos)> {
    let (name, pos) = p.ident()?;
    p.expect(Tok::LBrace)?;
    p.keyword("range")?;
    p.expect(Tok::Colon)?;
    let range = p.range()?;
    p.attr_sep();
    p.expect(Tok::RBrace)?;
    Ok((ConstDecl { name, range }, pos))
}

fn parse_var_decl(p: &mut Parser) -> PResult<(VarDecl, Pos)> {
    let (name, pos) = p.ident()?;
    let mut decl = VarDecl { name, aggregation: Aggregation::Sum, range: None };
    if p.eat(Tok::LBrace) {
        while *p.peek() != Tok::RBrace {
            let (attr, apos) = p.ident()?;
            p.expect(Tok::Colon)?;
            match attr.as_str() {
                "aggregation" => {
                    let (agg, agg_pos) = p.ident()?;
                    if agg != "sum" {
                        return Err(DslError::new(
                            ErrorKind::UnsupportedAggregation,
                            agg_pos,
                            format!("aggregation `{agg}` is not supported; only `sum` is"),
                        )
                        .with_symbol(&agg));
                    }
                }
                "range" => decl.range = Some(p.range()?),
                _ => {
                    return Err(DslError::new(ErrorKind::Syntax, apos, format!("unknown variable attribute `{attr}`"))
                        .with_symbol(&attr))
                }
            }
            if !p.attr_sep() {
                break;
            }
        }
        p.expect(Tok::RBrace)?;
    }
    Ok((decl, pos))
}

fn comma_list<T>(p: &mut Parser, mut item: impl FnMut(&mut Parser) -> PResult<T>) -> PResult<Vec<T>> {
    let mut out = vec![item(p)?];
    while p.eat(Tok::Comma) {
        out.push(item(p)?);
    }
    p.expect(Tok::Semi)?;
    Ok(out)
}

fn check_unique<'a>(names: impl IntoIterator<Item = (&'a str, Pos)>, what: &str) -> PResult<()> {
    let mut seen = HashSet::new();
    for (name, pos) in names {
        if !seen.insert(name) {
            return Err(DslError::new(ErrorKind::DuplicateName, pos, format!("duplicate {what} `{name}`"))
                .with_symbol(name));
        }
    }
    Ok(())
}

/// Parses and validates a template library.
pub fn parse_library(text: &str) -> Result<Library, DslError> {
    let mut p = Parser::new(text)?;
    if *p.peek() == Tok::Eof {
        return Err(p.error("`template`"));
    }
    let mut entities: IndexMap<String, EntityTemplate> = IndexMap::new();
    let mut raw_processes: Vec<RawProcess> = Vec::new();

    while *p.peek() != Tok::Eof {
        p.keyword("template")?;
        if p.at_keyword("entity") {
            p.next();
            let (name, pos) = p.ident()?;
            if entities.contains_key(&name) {
                return Err(DslError::new(ErrorKind::DuplicateName, pos, format!("duplicate entity template `{name}`"))
                    .with_symbol(&name));
            }
            p.expect(Tok::LBrace)?;
            let mut vars = Vec::new();
            let mut consts = Vec::new();
            while *p.peek() != Tok::RBrace {
                let (section, spos) = p.ident()?;
                p.expect(Tok::Colon)?;
                match section.as_str() {
                    "vars" => vars.extend(comma_list(&mut p, parse_var_decl)?),
                    "consts" => consts.extend(comma_list(&mut p, parse_const_decl)?),
                    _ => {
                        return Err(DslError::new(
                            ErrorKind::Syntax,
                            spos,
                            format!("expected `vars` or `consts`, found `{section}`"),
                        )
                        .with_symbol(&section))
                    }
                }
            }
            p.expect(Tok::RBrace)?;
            check_unique(
                vars.iter().map(|(v, pos)| (v.name.as_str(), *pos)).chain(consts.iter().map(|(c, pos)| (c.name.as_str(), *pos))),
                "property",
            )?;
            entities.insert(
                name.clone(),
                EntityTemplate {
                    name,
                    vars: vars.into_iter().map(|(v, _)| v).collect(),
                    consts: consts.into_iter().map(|(c, _)| c).collect(),
                },
            );
        } else if p.at_keyword("process") {
            p.next();
            let (name, pos) = p.ident()?;
            let mut params = None;
            if p.eat(Tok::LParen) {
                let mut list = Vec::new();
                if *p.peek() != Tok::RParen {
                    loop {
                        let (pname, ppos) = p.ident()?;
                        p.expect(Tok::Colon)?;
                        let (entity, _) = p.ident()?;
                        list.push((EntityParam { name: pname, entity }, ppos));
                        if !p.eat(Tok::Comma) {
                            break;
                        }
                    }
                }
                p.expect(Tok::RParen)?;
                params = Some(list);
            }
            let parent = if p.eat(Tok::Colon) { Some(p.dotted_name()?) } else { None };
            if parent.is_some() && params.is_some() {
                return Err(DslError::new(
                    ErrorKind::RedeclaredInherited,
                    pos,
                    format!("`{name}` has a parent; entity parameters are inherited from the hierarchy root"),
                )
                .with_symbol(&name));
            }
            p.expect(Tok::LBrace)?;
            let mut consts = Vec::new();
            let mut equations = Vec::new();
            while *p.peek() != Tok::RBrace {
                let (section, spos) = p.ident()?;
                p.expect(Tok::Colon)?;
                match section.as_str() {
                    "consts" => consts.extend(comma_list(&mut p, parse_const_decl)?),
                    "equations" => equations.extend(comma_list(&mut p, Parser::equation)?),
                    _ => {
                        return Err(DslError::new(
                            ErrorKind::Syntax,
                            spos,
                            format!("expected `consts` or `equations`, found `{section}`"),
                        )
                        .with_symbol(&section))
                    }
                }
            }
            p.expect(Tok::RBrace)?;
            raw_processes.push(RawProcess { name, pos, params, parent, consts, equations });
        } else {
            return Err(p.error("`entity` or `process`"));
        }
    }

    let processes = resolve_processes(&entities, raw_processes)?;
    Ok(Library { entities, processes })
}

fn resolve_processes(
    entities: &IndexMap<String, EntityTemplate>,
    raw: Vec<RawProcess>,
) -> PResult<IndexMap<String, ProcessTemplate>> {
    // Parent references name a template by plain name (unique) or by path.
    let n = raw.len();
    let mut paths: Vec<Option<String>> = raw
        .iter()
        .map(|r| if r.parent.is_none() { Some(r.name.clone()) } else { None })
        .collect();
    let mut parent_idx: Vec<Option<usize>> = vec![None; n];

    for (i, r) in raw.iter().enumerate() {
        if let Some((pref, ppos)) = &r.parent {
            if !pref.contains('.') {
                let hits: Vec<usize> = (0..n).filter(|&j| raw[j].name == *pref).collect();
                match hits.as_slice() {
                    [] => {
                        return Err(DslError::new(ErrorKind::UnknownParent, *ppos, format!("unknown parent template `{pref}`"))
                            .with_symbol(pref))
                    }
                    [j] => parent_idx[i] = Some(*j),
                    _ => {
                        return Err(DslError::new(
                            ErrorKind::AmbiguousTemplate,
                            *ppos,
                            format!("parent `{pref}` is ambiguous; qualify it with its hierarchy path"),
                        )
                        .with_symbol(pref))
                    }
                }
            }
        }
    }

    // Fixpoint: a template's path is known once its parent's path is.
    loop {
        let mut progressed = false;
        for i in 0..n {
            if paths[i].is_some() {
                continue;
            }
            let (pref, _) = raw[i].parent.as_ref().expect("roots have paths");
            let parent_path = match parent_idx[i] {
                Some(j) => paths[j].clone(),
                None => (0..n).find(|&j| paths[j].as_deref() == Some(pref.as_str())).map(|j| {
                    parent_idx[i] = Some(j);
                    pref.clone()
                }),
            };
            if let Some(pp) = parent_path {
                paths[i] = Some(format!("{pp}.{}", raw[i].name));
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    if let Some(i) = (0..n).find(|&i| paths[i].is_none()) {
        let (pref, ppos) = raw[i].parent.clone().expect("unresolved templates have parents");
        // A plain-name parent that exists but never got a path sits on a
        // cycle; an unresolved dotted path names nothing.
        let kind = if parent_idx[i].is_some() { ErrorKind::CyclicHierarchy } else { ErrorKind::UnknownParent };
        let msg = match kind {
            ErrorKind::CyclicHierarchy => format!("template `{}` is part of a cyclic hierarchy", raw[i].name),
            _ => format!("unknown parent template `{pref}`"),
        };
        return Err(DslError::new(kind, ppos, msg).with_symbol(&pref));
    }
    let paths: Vec<String> = paths.into_iter().map(Option::unwrap).collect();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, path) in paths.iter().enumerate() {
        if seen.insert(path.as_str(), i).is_some() {
            return Err(DslError::new(ErrorKind::DuplicateName, raw[i].pos, format!("duplicate process template `{path}`"))
                .with_symbol(&raw[i].name));
        }
    }

    // Materialize inherited params, consts and equations. Parents may be
    // declared after children, so process in depth order.
    let depth = |i: usize| paths[i].matches('.').count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (depth(i), i));

    let mut built: Vec<Option<ProcessTemplate>> = vec![None; n];
    for &i in &order {
        let r = &raw[i];
        let (params, mut consts, mut equations) = match parent_idx[i] {
            None => {
                let params = r.params.clone().unwrap_or_default();
                for (ep, ppos) in &params {
                    if !entities.contains_key(&ep.entity) {
                        return Err(DslError::new(
                            ErrorKind::UnknownEntityTemplate,
                            *ppos,
                            format!("unknown entity template `{}`", ep.entity),
                        )
                        .with_symbol(&ep.entity));
                    }
                }
                check_unique(params.iter().map(|(ep, pos)| (ep.name.as_str(), *pos)), "entity parameter")?;
                (params.into_iter().map(|(ep, _)| ep).collect::<Vec<_>>(), Vec::new(), Vec::new())
            }
            Some(j) => {
                let parent = built[j].as_ref().expect("parents are built first");
                (parent.params.clone(), parent.consts.clone(), parent.equations.clone())
            }
        };
        check_unique(r.consts.iter().map(|(c, pos)| (c.name.as_str(), *pos)), "constant")?;
        for (c, cpos) in &r.consts {
            if consts.iter().any(|k: &ConstDecl| k.name == c.name) {
                return Err(DslError::new(
                    ErrorKind::RedeclaredInherited,
                    *cpos,
                    format!("constant `{}` is already declared by an ancestor", c.name),
                )
                .with_symbol(&c.name));
            }
        }
        let own_consts: Vec<ConstDecl> = r.consts.iter().map(|(c, _)| c.clone()).collect();
        consts.extend(own_consts.iter().cloned());
        for eq in &r.equations {
            check_equation(eq, &params, &consts, entities)?;
        }
        equations.extend(r.equations.iter().cloned());
        built[i] = Some(ProcessTemplate {
            name: r.name.clone(),
            path: paths[i].clone(),
            parent: parent_idx[i].map(|j| paths[j].clone()),
            children: Vec::new(),
            params,
            own_consts,
            consts,
            own_equations: r.equations.clone(),
            equations,
            pos: r.pos,
        });
    }

    let mut out: IndexMap<String, ProcessTemplate> = IndexMap::new();
    for (i, t) in built.into_iter().enumerate() {
        out.insert(paths[i].clone(), t.expect("all templates built"));
    }
    for i in 0..n {
        if let Some(j) = parent_idx[i] {
            let child = paths[i].clone();
            out.get_mut(&paths[j]).expect("parent exists").children.push(child);
        }
    }
    Ok(out)
}

fn check_equation(
    eq: &Equation,
    params: &[EntityParam],
    consts: &[ConstDecl],
    entities: &IndexMap<String, EntityTemplate>,
) -> PResult<()> {
    let entity_of = |param: &str| {
        params.iter().find(|p| p.name == param).and_then(|p| entities.get(&p.entity))
    };
    let target = &eq.target;
    match entity_of(&target.param) {
        Some(ent) if ent.var(&target.var).is_some() => {}
        _ => {
            let sym = format!("{}.{}", target.param, target.var);
            return Err(DslError::new(
                ErrorKind::UnresolvedSymbol,
                eq.pos,
                format!("equation target `{sym}` is not a variable of a declared entity parameter"),
            )
            .with_symbol(&sym));
        }
    }
    let mut bad: Option<(String, Pos)> = None;
    eq.rhs.for_each_ref(&mut |sym, pos| {
        if bad.is_some() {
            return;
        }
        let ok = match sym {
            Symbol::Property { param, name } => {
                entity_of(param).is_some_and(|e| e.var(name).is_some() || e.const_decl(name).is_some())
            }
            Symbol::Const { name } => consts.iter().any(|c| c.name == *name),
        };
        if !ok {
            bad = Some((sym.to_string(), pos));
        }
    });
    if let Some((sym, pos)) = bad {
        return Err(DslError::new(ErrorKind::UnresolvedSymbol, pos, format!("unresolved symbol `{sym}`")).with_symbol(&sym));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

enum RawConst {
    Null,
    Value(f64),
    Placeholder(String, Pos),
}

fn parse_const_binding(p: &mut Parser) -> PResult<(String, Pos, RawConst)> {
    let (name, pos) = p.ident()?;
    p.expect(Tok::Eq)?;
    let value = match p.peek().clone() {
        Tok::Ident(s) if s == "null" => {
            p.next();
            RawConst::Null
        }
        Tok::Placeholder(s) => {
            let ppos = p.next().pos;
            RawConst::Placeholder(s, ppos)
        }
        _ => RawConst::Value(p.signed_number()?),
    };
    Ok((name, pos, value))
}

fn substitute_const(raw: RawConst, subs: &HashMap<String, Substitution>) -> PResult<ConstValue> {
    Ok(match raw {
        RawConst::Null => ConstValue::Free,
        RawConst::Value(v) => ConstValue::Fixed(v),
        RawConst::Placeholder(name, pos) => match subs.get(&name) {
            Some(Substitution::Value(v)) => ConstValue::Fixed(*v),
            Some(Substitution::Template(_)) => {
                return Err(DslError::new(
                    ErrorKind::UnboundPlaceholder,
                    pos,
                    format!("placeholder `${name}` holds a template, not a value"),
                )
                .with_symbol(&name))
            }
            None => {
                return Err(DslError::new(ErrorKind::UnboundPlaceholder, pos, format!("placeholder `${name}` has no value"))
                    .with_symbol(&name))
            }
        },
    })
}

/// Placeholders (`$name`) referenced by a scenario text, in order of first use.
pub fn scenario_placeholders(text: &str) -> Result<Vec<String>, DslError> {
    let mut out: Vec<String> = Vec::new();
    for t in tokenize(text)? {
        if let Tok::Placeholder(name) = t.tok {
            if !out.contains(&name) {
                out.push(name);
            }
        }
    }
    Ok(out)
}

/// Parses a scenario and resolves it against `lib`.
pub fn parse_scenario(text: &str, lib: &Library) -> Result<Scenario, DslError> {
    parse_scenario_with(text, lib, &HashMap::new())
}

/// Like [`parse_scenario`], substituting `$name` placeholders from `subs`.
pub fn parse_scenario_with(
    text: &str,
    lib: &Library,
    subs: &HashMap<String, Substitution>,
) -> Result<Scenario, DslError> {
    let mut p = Parser::new(text)?;
    if *p.peek() == Tok::Eof {
        return Err(p.error("`entity` or `process`"));
    }
    let mut scenario = Scenario::default();
    let mut entity_pos: HashMap<String, Pos> = HashMap::new();

    while *p.peek() != Tok::Eof {
        if p.at_keyword("entity") {
            p.next();
            let (name, pos) = p.ident()?;
            p.expect(Tok::Colon)?;
            let (template, tpos) = p.ident()?;
            let tmpl = lib.entities.get(&template).ok_or_else(|| {
                DslError::new(ErrorKind::UnknownTemplate, tpos, format!("unknown entity template `{template}`"))
                    .with_symbol(&template)
            })?;
            if entity_pos.insert(name.clone(), pos).is_some() {
                return Err(DslError::new(ErrorKind::DuplicateName, pos, format!("duplicate entity `{name}`"))
                    .with_symbol(&name));
            }
            p.expect(Tok::LBrace)?;
            let mut vars: Vec<(VarBinding, Pos)> = Vec::new();
            let mut consts: Vec<(String, Pos, RawConst)> = Vec::new();
            while *p.peek() != Tok::RBrace {
                let (section, spos) = p.ident()?;
                p.expect(Tok::Colon)?;
                match section.as_str() {
                    "vars" => vars.extend(comma_list(&mut p, parse_var_binding)?),
                    "consts" => consts.extend(comma_list(&mut p, parse_const_binding)?),
                    _ => {
                        return Err(DslError::new(
                            ErrorKind::Syntax,
                            spos,
                            format!("expected `vars` or `consts`, found `{section}`"),
                        )
                        .with_symbol(&section))
                    }
                }
            }
            let close = p.expect(Tok::RBrace)?;
            check_unique(vars.iter().map(|(v, pos)| (v.name.as_str(), *pos)), "variable binding")?;
            check_unique(consts.iter().map(|(c, pos, _)| (c.as_str(), *pos)), "constant binding")?;
            for (v, vpos) in &vars {
                if tmpl.var(&v.name).is_none() {
                    return Err(DslError::new(
                        ErrorKind::UnknownVar,
                        *vpos,
                        format!("entity template `{template}` declares no variable `{}`", v.name),
                    )
                    .with_symbol(&v.name));
                }
                if v.role == Role::Endogenous && v.initial.is_none() {
                    return Err(DslError::new(
                        ErrorKind::MissingInitial,
                        *vpos,
                        format!("endogenous variable `{name}.{}` needs an initial value", v.name),
                    )
                    .with_symbol(&v.name));
                }
            }
            for decl in &tmpl.vars {
                if !vars.iter().any(|(v, _)| v.name == decl.name) {
                    return Err(DslError::new(
                        ErrorKind::MissingRole,
                        close,
                        format!("variable `{name}.{}` has no role", decl.name),
                    )
                    .with_symbol(&decl.name));
                }
            }
            let mut bound = Vec::new();
            for (cname, cpos, raw) in consts {
                if tmpl.const_decl(&cname).is_none() {
                    return Err(DslError::new(
                        ErrorKind::UnknownConst,
                        cpos,
                        format!("entity template `{template}` declares no constant `{cname}`"),
                    )
                    .with_symbol(&cname));
                }
                let range = tmpl.const_decl(&cname).expect("checked").range;
                bound.push(ConstBinding { name: cname, value: substitute_const(raw, subs)?, range });
            }
            // Template order, unmentioned constants free.
            let consts = tmpl
                .consts
                .iter()
                .map(|c| {
                    bound
                        .iter()
                        .find(|b| b.name == c.name)
                        .cloned()
                        .unwrap_or(ConstBinding { name: c.name.clone(), value: ConstValue::Free, range: c.range })
                })
                .collect();
            let vars = tmpl
                .vars
                .iter()
                .map(|d| {
                    let mut v = vars.iter().find(|(v, _)| v.name == d.name).expect("checked above").0.clone();
                    v.range = d.range;
                    v
                })
                .collect();
            scenario.entities.push(EntityInstance { name, template, vars, consts });
        } else if p.at_keyword("process") {
            p.next();
            let (name, pos) = p.ident()?;
            if scenario.processes.iter().any(|s| s.name == name) {
                return Err(DslError::new(ErrorKind::DuplicateName, pos, format!("duplicate process `{name}`"))
                    .with_symbol(&name));
            }
            p.expect(Tok::LParen)?;
            let mut args: Vec<(String, Pos)> = Vec::new();
            if *p.peek() != Tok::RParen {
                loop {
                    args.push(p.ident()?);
                    if !p.eat(Tok::Comma) {
                        break;
                    }
                }
            }
            p.expect(Tok::RParen)?;
            p.expect(Tok::Colon)?;
            let (tref, tpos) = match p.peek().clone() {
                Tok::Placeholder(ph) => {
                    let ppos = p.next().pos;
                    match subs.get(&ph) {
                        Some(Substitution::Template(t)) => (t.clone(), ppos),
                        _ => {
                            return Err(DslError::new(
                                ErrorKind::UnboundPlaceholder,
                                ppos,
                                format!("placeholder `${ph}` has no template value"),
                            )
                            .with_symbol(&ph))
                        }
                    }
                }
                _ => p.dotted_name()?,
            };
            let tmpl = lib.find_process(&tref).map_err(|hits| {
                if hits.is_empty() {
                    DslError::new(ErrorKind::UnknownTemplate, tpos, format!("unknown process template `{tref}`"))
                        .with_symbol(&tref)
                } else {
                    DslError::new(
                        ErrorKind::AmbiguousTemplate,
                        tpos,
                        format!("`{tref}` is ambiguous: {}", hits.join(", ")),
                    )
                    .with_symbol(&tref)
                }
            })?;
            p.expect(Tok::LBrace)?;
            let mut consts: Vec<(String, Pos, RawConst)> = Vec::new();
            while *p.peek() != Tok::RBrace {
                let (section, spos) = p.ident()?;
                p.expect(Tok::Colon)?;
                if section != "consts" {
                    return Err(DslError::new(ErrorKind::Syntax, spos, format!("expected `consts`, found `{section}`"))
                        .with_symbol(&section));
                }
                consts.extend(comma_list(&mut p, parse_const_binding)?);
            }
            p.expect(Tok::RBrace)?;

            if args.len() > tmpl.params.len() {
                return Err(DslError::new(
                    ErrorKind::ArityMismatch,
                    pos,
                    format!("`{}` takes {} entities, {} given", tmpl.path, tmpl.params.len(), args.len()),
                )
                .with_symbol(&name));
            }
            for ((arg, apos), param) in args.iter().zip(&tmpl.params) {
                let inst = scenario.entity(arg).ok_or_else(|| {
                    DslError::new(ErrorKind::UnknownEntity, *apos, format!("unknown entity `{arg}`")).with_symbol(arg)
                })?;
                if inst.template != param.entity {
                    return Err(DslError::new(
                        ErrorKind::EntityTypeMismatch,
                        *apos,
                        format!(
                            "`{arg}` is a {} but parameter `{}` of `{}` expects a {}",
                            inst.template, param.name, tmpl.path, param.entity
                        ),
                    )
                    .with_symbol(arg));
                }
            }
            check_unique(consts.iter().map(|(c, pos, _)| (c.as_str(), *pos)), "constant binding")?;
            let mut bound = Vec::new();
            for (cname, cpos, raw) in consts {
                if tmpl.const_decl(&cname).is_none() {
                    return Err(DslError::new(
                        ErrorKind::UnknownConst,
                        cpos,
                        format!("process template `{}` declares no constant `{cname}`", tmpl.path),
                    )
                    .with_symbol(&cname));
                }
                let range = tmpl.const_decl(&cname).expect("checked").range;
                bound.push(ConstBinding { name: cname, value: substitute_const(raw, subs)?, range });
            }
            scenario.processes.push(ProcessSkeleton {
                name,
                partial: args.len() < tmpl.params.len(),
                args: args.into_iter().map(|(a, _)| a).collect(),
                template: tmpl.path.clone(),
                consts: bound,
            });
        } else {
            return Err(p.error("`entity` or `process`"));
        }
    }
    Ok(scenario)
}

fn parse_var_binding(p: &mut Parser) -> PResult<(VarBinding, Pos)> {
    let (name, pos) = p.ident()?;
    let mut role = None;
    let mut initial = None;
    let mut column = None;
    p.expect(Tok::LBrace)?;
    while *p.peek() != Tok::RBrace {
        let (attr, apos) = p.ident()?;
        p.expect(Tok::Colon)?;
        match attr.as_str() {
            "role" => {
                let (r, rpos) = p.ident()?;
                role = Some(match r.as_str() {
                    "endogenous" => Role::Endogenous,
                    "exogenous" => Role::Exogenous,
                    _ => {
                        return Err(DslError::new(
                            ErrorKind::Syntax,
                            rpos,
                            format!("role must be `endogenous` or `exogenous`, found `{r}`"),
                        )
                        .with_symbol(&r))
                    }
                });
            }
            "initial" => initial = Some(p.signed_number()?),
            "column" => column = Some(p.dotted_name()?.0),
            _ => {
                return Err(DslError::new(ErrorKind::Syntax, apos, format!("unknown variable attribute `{attr}`"))
                    .with_symbol(&attr))
            }
        }
        if !p.attr_sep() {
            break;
        }
    }
    let close = p.expect(Tok::RBrace)?;
    let role = role.ok_or_else(|| {
        DslError::new(ErrorKind::MissingRole, close, format!("variable `{name}` has no role")).with_symbol(&name)
    })?;
    Ok((VarBinding { name, role, initial, column, range: None }, pos))
}
