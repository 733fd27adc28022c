//! The template SQL dialect: syntax tree, parser, canonical renderer and slot
//! substitution.

mod ast;
mod parser;
mod render;
mod visit;

pub use ast::*;
pub use parser::{parse_sql, ParseError, ParseMode};
pub use render::{quote_ident, render_literal, render_sql};
pub use visit::{
    is_concrete, slot_occurrences, substitute_slots, walk_query, Bindings, OperandShape,
    SubstituteError, TermVisitor, Terminal,
};
