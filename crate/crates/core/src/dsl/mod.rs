//! Model definition language.
//!
//! Model files declare index families, fields, kinetic pairings,
//! constraints and a Hamiltonian density in a small line-oriented syntax;
//! see `models/grammar.ebnf` for the full grammar and the files under
//! `models/` for complete examples. [`parse_model`] builds a [`ModelDef`],
//! [`serialize_model`] is its deterministic inverse, and
//! [`parse_expression`] resolves standalone expression text against an
//! existing context (used heavily by tests and verification fixtures).

mod ast;
mod lex;
mod parse;
mod serialize;

pub use ast::{
    ConstraintDef, Convention, Diagnostic, KineticTerm, ModelDef, Span, SymplecticOverride,
};
pub use parse::{parse_expression, parse_model};
pub use serialize::serialize_model;
