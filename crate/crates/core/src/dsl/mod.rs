//! Statement language: lexer, syntax trees, parser and canonical printer.

pub mod ast;
mod lexer;
mod parser;
mod printer;

pub use ast::*;
pub use parser::{is_reserved, parse, parse_expr, parse_located, parse_query, Located};
pub use printer::{print_expr, print_query, print_statement, print_statements};

#[cfg(test)]
mod tests;
