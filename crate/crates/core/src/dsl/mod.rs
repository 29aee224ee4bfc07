//! The process-based modeling language: template libraries and modeling
//! scenarios.

pub mod ast;
pub mod error;
pub mod lexer;
pub mod parser;
pub mod print;

pub use ast::*;
pub use error::{DslError, ErrorKind};
pub use parser::{parse_library, parse_scenario, parse_scenario_with, scenario_placeholders, Substitution};
pub use print::{expr_to_string, library_json, print_library, scenario_json};

/// 1-based line and column in the source text.
///
/// Positions are metadata only: any two compare equal, so an AST re-parsed
/// from printed text is `==` to the original.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Pos) -> bool {
        true
    }
}
