use std::fmt;

use thiserror::Error;

use super::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Syntax,
    MalformedRange,
    DuplicateName,
    UnknownEntityTemplate,
    UnknownParent,
    AmbiguousTemplate,
    CyclicHierarchy,
    UnresolvedSymbol,
    RedeclaredInherited,
    UnsupportedAggregation,
    UnknownTemplate,
    UnknownEntity,
    MissingRole,
    UnknownVar,
    UnknownConst,
    MissingInitial,
    EntityTypeMismatch,
    ArityMismatch,
    UnboundPlaceholder,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Syntax => "syntax error",
            ErrorKind::MalformedRange => "malformed range",
            ErrorKind::DuplicateName => "duplicate name",
            ErrorKind::UnknownEntityTemplate => "unknown entity template",
            ErrorKind::UnknownParent => "unknown parent template",
            ErrorKind::AmbiguousTemplate => "ambiguous template name",
            ErrorKind::CyclicHierarchy => "cyclic template hierarchy",
            ErrorKind::UnresolvedSymbol => "unresolved symbol",
            ErrorKind::RedeclaredInherited => "redeclared inherited member",
            ErrorKind::UnsupportedAggregation => "unsupported aggregation",
            ErrorKind::UnknownTemplate => "unknown template",
            ErrorKind::UnknownEntity => "unknown entity instance",
            ErrorKind::MissingRole => "missing role",
            ErrorKind::UnknownVar => "unknown variable",
            ErrorKind::UnknownConst => "unknown constant",
            ErrorKind::MissingInitial => "missing initial value",
            ErrorKind::EntityTypeMismatch => "entity type mismatch",
            ErrorKind::ArityMismatch => "arity mismatch",
            ErrorKind::UnboundPlaceholder => "unbound placeholder",
        };
        f.write_str(s)
    }
}

/// A parse or validation failure, located in the input text.
#[derive(Debug, Clone, Error)]
#[error("{}:{}: {kind}: {message}", pos.line, pos.col)]
pub struct DslError {
    pub kind: ErrorKind,
    pub pos: Pos,
    pub message: String,
    /// The offending symbol, when there is one.
    pub symbol: Option<String>,
}

impl DslError {
    pub(crate) fn new(kind: ErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        DslError { kind, pos, message: message.into(), symbol: None }
    }

    pub(crate) fn with_symbol(mut self, symbol: &str) -> Self {
        self.symbol = Some(symbol.to_string());
        self
    }

    /// Syntax errors come from the grammar; everything else is a validation
    /// failure of otherwise well-formed text.
    pub fn is_syntax(&self) -> bool {
        matches!(self.kind, ErrorKind::Syntax)
    }
}
